from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import regression_problem
from swiftfl.baselines import (
    dsgd_round,
    ldsgd_averages,
    ldsgd_round,
    local_round,
    metropolis_weights,
    pasgd_averages,
    pasgd_round,
    round_duration,
    run_sync,
)
from swiftfl.engine import Timing
from swiftfl.topology import make_complete, make_ring, make_star, random_connected


def _streams(problem, seed):
    problem.reseed(seed)
    return problem.oracles


@pytest.mark.parametrize("n", [3, 5, 12])
def test_metropolis_ring(n):
    w = metropolis_weights(make_ring(n))
    assert np.allclose(np.diag(w), 1 / 3, atol=1e-15)
    assert w[0, 1] == pytest.approx(1 / 3) and w[0, n - 1] == pytest.approx(1 / 3)


def test_metropolis_complete_and_star():
    assert np.allclose(metropolis_weights(make_complete(5)), 0.2, atol=1e-15)
    w = metropolis_weights(make_star(4))
    assert np.allclose(w[0], 0.25, atol=1e-15)
    assert np.allclose(w.sum(axis=0), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_metropolis_doubly_stochastic(n, seed):
    t = random_connected(n, np.random.default_rng(seed))
    w = metropolis_weights(t)
    assert np.max(np.abs(w - w.T)) <= 1e-12
    assert np.max(np.abs(w.sum(axis=0) - 1)) <= 1e-12
    assert np.max(np.abs(w.sum(axis=1) - 1)) <= 1e-12
    off_graph = (t.adjacency_matrix() + np.eye(n)) == 0
    assert np.all(w[off_graph] == 0)


def test_dsgd_round_examples():
    prob = regression_problem(2, per_client=20, d=3)
    models = np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
    half = np.full((2, 2), 0.5)
    out = dsgd_round(models, half, 0.0, prob.oracles)
    assert np.allclose(out, [[2.0, 2.0, 2.0]] * 2)
    same = np.tile([0.5, -1.0, 2.0], (2, 1))
    assert np.array_equal(dsgd_round(same, half, 0.0, prob.oracles), same)


def test_dsgd_identity_is_independent_sgd():
    prob = regression_problem(3, per_client=20, d=3)
    models = np.random.default_rng(0).normal(size=(3, 3))
    a = dsgd_round(models, np.eye(3), 0.1, _streams(prob, 1))
    b = local_round(models, 0.1, _streams(prob, 1))
    assert np.array_equal(a, b)


def test_pasgd_schedule():
    assert all(pasgd_averages(r, 0) for r in range(1, 10))
    T = 11
    assert sum(pasgd_averages(r, 1) for r in range(1, T + 1)) == T // 2
    assert not any(pasgd_averages(r, math.inf) for r in range(1, 50))


def test_ldsgd_pattern():
    pattern = "".join("D" if ldsgd_averages(r, 3, 2) else "L" for r in range(1, 11))
    assert pattern == "LLLDDLLLDD"
    assert all(ldsgd_averages(r, 0, 2) for r in range(1, 10))
    with pytest.raises(ValueError):
        ldsgd_averages(1, 1, 0)


@pytest.mark.parametrize("I1", [0, 1, 3])
def test_ldsgd_with_single_dsgd_step_is_pasgd(I1):
    assert [ldsgd_averages(r, I1, 1) for r in range(1, 30)] == [pasgd_averages(r, I1) for r in range(1, 30)]
    prob = regression_problem(4, per_client=20, d=3)
    W = metropolis_weights(make_ring(4))
    a = b = np.zeros((4, 3))
    oracles = _streams(prob, 2)
    for r in range(1, 8):
        a = ldsgd_round(a, W, 0.1, oracles, r, I1, 1)
    oracles = _streams(prob, 2)
    for r in range(1, 8):
        b = pasgd_round(b, W, 0.1, oracles, r, I1)
    assert np.array_equal(a, b)


def test_zero_local_steps_is_dsgd():
    prob = regression_problem(4, per_client=20, d=3)
    ring = make_ring(4)
    ref = run_sync(prob, ring, 0.1, 40, "dsgd", seed=3)
    for algorithm, kw in (("pasgd", {"I1": 0}), ("ldsgd", {"I1": 0, "I2": 3})):
        rec = run_sync(prob, ring, 0.1, 40, algorithm, seed=3, **kw)
        assert np.array_equal(rec.final_models, ref.final_models)


@pytest.mark.parametrize("algorithm,kw", [("dsgd", {}), ("pasgd", {"I1": 2}), ("ldsgd", {"I1": 2, "I2": 2})])
def test_zero_gradient_preserves_average(algorithm, kw):
    prob = regression_problem(5, per_client=20, d=3)
    x0 = np.random.default_rng(0).normal(size=3)
    rec = run_sync(prob, make_ring(5), 0.0, 50, algorithm, x0=x0, seed=0, **kw)
    assert np.allclose(rec.final_models.mean(axis=0), x0, atol=1e-14)


def test_round_duration_uses_slowest_neighbour():
    t = make_ring(5)
    timing = Timing.uniform(5, compute=1.0, comm=0.1, slow={3: 4.0})
    assert round_duration(timing, t, False) == pytest.approx(4.0)
    assert round_duration(timing, t, True) == pytest.approx(4.1)
    assert round_duration(timing.with_comm(1, 0.7), t, True) == pytest.approx(4.7)


def test_run_sync_accounting():
    prob = regression_problem(4, per_client=20, d=3)
    timing = Timing.uniform(4)
    rec = run_sync(prob, make_ring(4), 0.1, 40, "pasgd", I1=1, seed=0, timing=timing)
    assert rec.rows[-1].t == 40 and rec.rows[-1].avg_events == 4 * 5
    assert rec.rows[-1].sim_time == pytest.approx(10 * 1.0 + 5 * 0.1)
    assert rec.client_updates.tolist() == [10] * 4
    assert np.allclose(rec.client_comm_time, 0.5)
    assert rec.algorithm == "pasgd"
    with pytest.raises(ValueError):
        run_sync(prob, make_ring(4), 0.1, 4, "adpsgd")


def test_dsgd_converges():
    prob = regression_problem(8)
    _, f_star = prob.optimum()
    rec = run_sync(prob, make_ring(8), 1 / (2 * prob.lipschitz()), 20_000, "dsgd", seed=0)
    assert rec.final_loss - f_star <= 1e-3
