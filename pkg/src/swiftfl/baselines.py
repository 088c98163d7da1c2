"""Synchronous decentralized SGD baselines: D-SGD, PA-SGD and LD-SGD.

All three share one round primitive. A round either averages (every client
takes a local step, then mixes the stepped models with ``W``) or is purely
local. Rounds are indexed from 1.

Models are stored row-wise: ``models[i]`` is client i's parameter vector.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .engine import Recorder, RunRecord, Timing
from .learning import GradientOracle, Problem
from .topology import Topology

__all__ = [
    "metropolis_weights",
    "local_round",
    "dsgd_round",
    "pasgd_round",
    "ldsgd_round",
    "pasgd_averages",
    "ldsgd_averages",
    "round_duration",
    "run_sync",
    "ALGORITHMS",
]

ALGORITHMS = ("dsgd", "pasgd", "ldsgd")


def metropolis_weights(t: Topology) -> np.ndarray:
    """``W_ij = 1 / (1 + max(d_i, d_j))`` on edges; the diagonal takes the rest."""
    w = np.zeros((t.n, t.n))
    for i, j in t.edges():
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(t.degrees[i], t.degrees[j]))
    w[np.diag_indices(t.n)] = 1.0 - w.sum(axis=1)
    return w


def _stepped(models: np.ndarray, gamma: float, oracles: Sequence[GradientOracle]) -> np.ndarray:
    return np.array([x - gamma * o.stochastic_gradient(x) for x, o in zip(models, oracles)])


def local_round(models: np.ndarray, gamma: float, oracles: Sequence[GradientOracle]) -> np.ndarray:
    return _stepped(models, gamma, oracles)


def dsgd_round(models: np.ndarray, W: np.ndarray, gamma: float, oracles: Sequence[GradientOracle]) -> np.ndarray:
    """``x_i <- sum_j W_ij (x_j - gamma g_j)`` for every client at once."""
    return W @ _stepped(models, gamma, oracles)


def pasgd_averages(round_index: int, I1: float) -> bool:
    """Membership of ``round_index`` in ``{t : t mod (I1+1) == 0}``; ``I1 = inf`` never averages."""
    if math.isinf(I1):
        return False
    return round_index % (int(I1) + 1) == 0


def ldsgd_averages(round_index: int, I1: int, I2: int) -> bool:
    """``I1`` local rounds, then ``I2`` D-SGD rounds, repeating."""
    if I2 < 1:
        raise ValueError("I2 must be >= 1")
    return (round_index - 1) % (I1 + I2) >= I1


def pasgd_round(models, W, gamma, oracles, round_index: int, I1: float) -> np.ndarray:
    if pasgd_averages(round_index, I1):
        return dsgd_round(models, W, gamma, oracles)
    return local_round(models, gamma, oracles)


def ldsgd_round(models, W, gamma, oracles, round_index: int, I1: int, I2: int) -> np.ndarray:
    if ldsgd_averages(round_index, I1, I2):
        return dsgd_round(models, W, gamma, oracles)
    return local_round(models, gamma, oracles)


def round_duration(timing: Timing, t: Topology, averages: bool) -> float:
    """Barrier round: slowest compute, plus the slowest neighbourhood exchange.

    The exchange term is ``max_i max_{j in N_i} comm_j``: every client waits
    for its slowest neighbour, and the barrier waits for every client.
    """
    d = float(np.max(timing.slowdown * timing.compute))
    if averages:
        d += max((float(max(timing.comm[j] for j in t.adjacency[i])) for i in range(t.n) if t.adjacency[i]), default=0.0)
    return d


def run_sync(
    problem: Problem,
    topology: Topology,
    gamma: float,
    T: int,
    algorithm: str = "dsgd",
    I1: float = 0,
    I2: int = 1,
    seed: int = 0,
    timing: Timing | None = None,
    W: np.ndarray | None = None,
    x0: np.ndarray | None = None,
    divergence_factor: float = 1e6,
) -> RunRecord:
    """Run ``ceil(T / n)`` synchronous rounds (one round = ``n`` global iterations).

    Without ``timing`` the simulated clock column is NaN.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown baseline {algorithm!r}")
    n = problem.n
    W = metropolis_weights(topology) if W is None else W
    problem.reseed(seed)
    models = np.tile(
        np.asarray(x0, dtype=float) if x0 is not None else problem.objective.initial_point(np.random.default_rng(0)),
        (n, 1),
    )
    record = RunRecord(algorithm=algorithm)
    rec = Recorder(problem, record, divergence_factor)
    rounds = math.ceil(T / n)
    avg_events = 0
    broadcasts = 0
    now = 0.0 if timing is not None else math.nan
    comm_time = np.zeros(n)
    events: list[list[float]] = [[] for _ in range(n)]
    avg_per_client = np.zeros(n, dtype=np.int64)
    rec.log(0, now, models, 0, 0)

    for r in range(1, rounds + 1):
        if algorithm == "dsgd":
            averages = True
        elif algorithm == "pasgd":
            averages = pasgd_averages(r, I1)
        else:
            averages = ldsgd_averages(r, int(I1), I2)
        if averages:
            models = dsgd_round(models, W, gamma, problem.oracles)
            avg_events += n
            avg_per_client += 1
            broadcasts += sum(topology.degrees)
        else:
            models = local_round(models, gamma, problem.oracles)
        if timing is not None:
            dur = round_duration(timing, topology, averages)
            if averages:
                comm_time += dur - float(np.max(timing.slowdown * timing.compute))
            now += dur
            for ev in events:
                ev.append(now)
        rec.log(r * n, now, models, avg_events, broadcasts)

    record.client_updates = np.full(n, rounds, dtype=np.int64)
    record.client_avg_events = avg_per_client
    record.client_comm_time = comm_time
    record.final_models = models
    record.event_times = events if timing is not None else None
    return record
