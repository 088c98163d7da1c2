from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swiftfl.learning import (
    MLP,
    Dataset,
    GradientOracle,
    LeastSquares,
    Logistic,
    PartitionError,
    build_problem,
    client_streams,
    lipschitz_estimate,
    load_csv,
    make_gaussian_mixture,
    make_linear_regression,
    make_objective,
    partition_class_cyclic,
    partition_degree,
    partition_iid,
    theorem_min_iterations,
    theorem_step_size,
    zeta_squared,
)


def _fd_gradient(f, x, h=1e-6):
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


@pytest.fixture(scope="module")
def mixture():
    return make_gaussian_mixture(2000, n_classes=10, n_features=20, seed=0)


# --- partitions --------------------------------------------------------------


def test_iid_shards():
    ds, _ = make_linear_regression(100, 3)
    part = partition_iid(ds, 4, seed=1)
    assert part.sizes() == [25, 25, 25, 25]
    assert np.array_equal(np.sort(np.concatenate(part.shards)), np.arange(100))
    again = partition_iid(ds, 4, seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(part.shards, again.shards))


def test_iid_too_few_samples():
    ds, _ = make_linear_regression(3, 2)
    with pytest.raises(PartitionError):
        partition_iid(ds, 4)


def test_class_cyclic_one_class_each(mixture):
    part = partition_class_cyclic(mixture, 10)
    for k, shard in enumerate(part.shards):
        assert set(mixture.labels[shard]) == {k}


def test_class_cyclic_two_classes_each(mixture):
    part = partition_class_cyclic(mixture, 5)
    assert set(mixture.labels[part.shards[0]]) == {0, 1}
    assert set(mixture.labels[part.shards[4]]) == {8, 9}


def test_class_cyclic_wraps(mixture):
    part = partition_class_cyclic(mixture, 20)
    for k, shard in enumerate(part.shards):
        assert set(mixture.labels[shard]) == {k % 10}
    assert sum(part.sizes()) == len(mixture)


def test_class_cyclic_spills_to_next_class():
    labels = np.array([0] * 2 + [1] * 6 + [2] * 4)
    ds = Dataset(np.zeros((12, 1)), labels, 3)
    part = partition_class_cyclic(ds, 3)
    # client 0 wants four of class 0 but only two exist
    assert sorted(labels[part.shards[0]]) == [0, 0, 1, 1]
    assert sum(part.sizes()) == 12


def test_degree_half(mixture):
    part = partition_degree(mixture, 10, 0.5, seed=0)
    for k, shard in enumerate(part.shards):
        frac = np.mean(mixture.labels[shard] == k)
        assert frac >= 0.5
    assert np.array_equal(np.sort(np.concatenate(part.shards)), np.arange(len(mixture)))


def test_degree_one_matches_class_cyclic(mixture):
    a = partition_degree(mixture, 10, 1.0, seed=3)
    b = partition_class_cyclic(mixture, 10)
    assert all(np.array_equal(x, y) for x, y in zip(a.shards, b.shards))


def test_degree_zero_label_mix_is_iid_like(mixture):
    part = partition_degree(mixture, 10, 0.0, seed=0)
    for shard in part.shards:
        counts = np.bincount(mixture.labels[shard], minlength=10) / len(shard)
        assert np.max(np.abs(counts - 0.1)) < 0.1


@pytest.mark.parametrize("degree", [-0.1, 1.2])
def test_degree_out_of_range(mixture, degree):
    with pytest.raises(PartitionError):
        partition_degree(mixture, 10, degree)


def test_degree_insufficient_label():
    ds = Dataset(np.zeros((20, 1)), np.array([0] * 18 + [1] * 2), 2)
    with pytest.raises(PartitionError):
        partition_degree(ds, 2, 0.9)


def test_class_partition_needs_classes():
    ds, _ = make_linear_regression(20, 2)
    with pytest.raises(PartitionError):
        partition_class_cyclic(ds, 2)


# --- objectives --------------------------------------------------------------


def test_least_squares_zero_at_solution():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(30, 4))
    x = rng.normal(size=4)
    obj = LeastSquares(4)
    assert np.allclose(obj.gradient(x, a, a @ x), 0.0, atol=1e-14)


def test_least_squares_single_sample():
    g = LeastSquares(2).gradient(np.zeros(2), np.array([[1.0, 0.0]]), np.array([1.0]))
    assert np.array_equal(g, [-1.0, 0.0])


def test_logistic_binary_at_origin():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(40, 3))
    b = np.array([0, 1] * 20)
    obj = Logistic(3, 2)
    y = np.where(b > 0, 1.0, -1.0)
    assert np.allclose(obj.gradient(np.zeros(3), a, b), -(a.T @ y) / (2 * len(b)), atol=1e-15)


@pytest.mark.parametrize(
    "obj,labels",
    [
        (LeastSquares(5), "real"),
        (Logistic(5, 2), 2),
        (Logistic(5, 4), 4),
        (MLP(5, 3, hidden=6), 3),
    ],
)
def test_gradient_matches_finite_differences(obj, labels):
    rng = np.random.default_rng(2)
    a = rng.normal(size=(25, 5))
    b = rng.normal(size=25) if labels == "real" else rng.integers(0, labels, size=25)
    x = obj.initial_point(rng) + 0.3 * rng.normal(size=obj.dim)
    g = obj.gradient(x, a, b)
    fd = _fd_gradient(lambda z: obj.loss(z, a, b), x)
    assert _rel_err(g, fd) <= 1e-5
    assert np.allclose(obj.per_sample_gradients(x, a, b).mean(axis=0), g, atol=1e-12)


def test_make_objective_dispatch(mixture):
    assert isinstance(make_objective("logistic", mixture), Logistic)
    assert make_objective("mlp", mixture, hidden=8).dim == 20 * 8 + 8 + 8 * 10 + 10
    ds, _ = make_linear_regression(10, 2)
    with pytest.raises(ValueError):
        make_objective("logistic", ds)
    with pytest.raises(ValueError):
        make_objective("svm", mixture)
    with pytest.raises(ValueError):
        MLP(3, 2, hidden=65)


# --- oracles -----------------------------------------------------------------


@pytest.mark.parametrize("kind", ["least_squares", "logistic"])
def test_minibatch_unbiased(kind, mixture):
    if kind == "least_squares":
        ds, _ = make_linear_regression(200, 6, seed=4)
    else:
        ds = make_gaussian_mixture(200, n_classes=3, n_features=4, seed=4)
    obj = make_objective(kind, ds)
    oracle = GradientOracle(obj, ds.features, ds.labels, batch_size=8, rng=np.random.default_rng(7))
    x = np.random.default_rng(8).normal(size=obj.dim)
    K = 10_000
    draws = np.array([oracle.stochastic_gradient(x) for _ in range(K)])
    full = oracle.full_gradient(x)
    sigma = draws.std(axis=0, ddof=1)
    assert np.all(np.abs(draws.mean(axis=0) - full) <= 4 * sigma / math.sqrt(K) + 1e-15)


def test_empty_batch_rejected():
    ds, _ = make_linear_regression(10, 2)
    oracle = GradientOracle(LeastSquares(2), ds.features, ds.labels, 4)
    with pytest.raises(ValueError):
        oracle.gradient(np.zeros(2), np.array([], dtype=int))


def test_lipschitz_identity_design():
    d = 4
    oracle = GradientOracle(LeastSquares(d), np.eye(d), np.zeros(d), 1)
    assert lipschitz_estimate(oracle) == pytest.approx(1.0 / d, rel=1e-12)


def test_lipschitz_scales_quadratically():
    ds, _ = make_linear_regression(50, 5, seed=2)
    one = GradientOracle(LeastSquares(5), ds.features, ds.labels, 1)
    two = GradientOracle(LeastSquares(5), 2 * ds.features, ds.labels, 1)
    assert lipschitz_estimate(two) == pytest.approx(4 * lipschitz_estimate(one), rel=1e-12)


@pytest.mark.parametrize("kind", ["least_squares", "logistic"])
def test_lipschitz_bounds_gradient_differences(kind):
    if kind == "least_squares":
        ds, _ = make_linear_regression(60, 5, seed=3)
    else:
        ds = make_gaussian_mixture(60, n_classes=3, n_features=5, seed=3)
    obj = make_objective(kind, ds)
    oracle = GradientOracle(obj, ds.features, ds.labels, 1)
    L = lipschitz_estimate(oracle)
    rng = np.random.default_rng(0)
    for _ in range(100):
        x, y = rng.normal(size=(2, obj.dim))
        lhs = np.linalg.norm(oracle.full_gradient(x) - oracle.full_gradient(y))
        assert lhs <= L * np.linalg.norm(x - y) * (1 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_zeta_iid_below_non_iid(seed):
    ds = make_gaussian_mixture(1000, n_classes=10, n_features=8, seed=seed)
    iid = build_problem(ds, partition_iid(ds, 10, seed=seed), "logistic", 16, seed)
    skew = build_problem(ds, partition_degree(ds, 10, 0.9, seed=seed), "logistic", 16, seed)
    x = np.random.default_rng(seed).normal(scale=0.1, size=iid.dim)
    assert zeta_squared(iid, x) < zeta_squared(skew, x)


# --- problem -----------------------------------------------------------------


def test_problem_fast_path_matches_sum():
    ds, _ = make_linear_regression(120, 4, seed=5)
    p = np.array([0.1, 0.2, 0.3, 0.4])
    prob = build_problem(ds, partition_iid(ds, 4), "least_squares", 8, 0, p=p)
    x = np.random.default_rng(0).normal(size=4)
    assert prob.loss(x) == pytest.approx(prob.sum_loss(x), rel=1e-12)
    expect = sum(pi * o.full_gradient(x) for pi, o in zip(p, prob.oracles))
    assert np.allclose(prob.gradient(x), expect, atol=1e-13)


def test_problem_optimum_is_stationary():
    ds, _ = make_linear_regression(200, 6, seed=6)
    prob = build_problem(ds, partition_iid(ds, 5), "least_squares", 8, 0)
    x_star, f_star = prob.optimum()
    assert np.linalg.norm(prob.gradient(x_star)) < 1e-12
    ref = np.linalg.lstsq(ds.features, ds.labels, rcond=None)[0]
    assert np.allclose(x_star, ref, atol=1e-10)  # equal shards: plain least squares
    assert f_star == pytest.approx(prob.loss(x_star), rel=1e-10)


def test_optimum_needs_least_squares(mixture):
    prob = build_problem(mixture, partition_iid(mixture, 4), "logistic", 8, 0)
    with pytest.raises(ValueError):
        prob.optimum()


def test_reseed_reproduces_streams():
    ds, _ = make_linear_regression(80, 3)
    prob = build_problem(ds, partition_iid(ds, 4), "least_squares", 4, 0)
    x = np.ones(3)
    prob.reseed(5)
    a = [o.stochastic_gradient(x) for o in prob.oracles]
    prob.reseed(5)
    b = [o.stochastic_gradient(x) for o in prob.oracles]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    s1, _ = client_streams(5, 4)
    s2, _ = client_streams(6, 4)
    assert s1.random() != s2.random()


def test_theorem_helpers():
    assert theorem_step_size(4, 2, 1.0, 9, 1.0) == pytest.approx(math.sqrt(16) / (3 + 2))
    assert theorem_min_iterations(1.0, 1, 1.0, 1.0, 1, 1.0) == 193.0**2


def test_load_csv(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x1,x2,y\n0.5,1.0,0\n1.5,2.0,2\n-1.0,0.0,1\n")
    ds = load_csv(path)
    assert ds.n_classes == 3 and ds.features.shape == (3, 2)
    reg = load_csv(path, classification=False)
    assert reg.n_classes is None and reg.labels.dtype == float
