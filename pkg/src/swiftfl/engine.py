"""Wait-free SWIFT updates under two schedulers.

``run_probabilistic`` samples the active client from the influence vector
each global iteration. ``run_event_driven`` replays a discrete-event
schedule in which every client completes updates at its own pace, so the
global iteration order is the completion order.

The gradient of a step is taken at the active client's model *before*
averaging, which is what makes a step equal to one column of
``X W_active - gamma G``.
"""

from __future__ import annotations

import csv
import heapq
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .learning import GradientOracle, Problem
from .weights import CommunicationVector, active_matrix

__all__ = [
    "DivergenceError",
    "CommunicationSet",
    "Mailbox",
    "ClientState",
    "StepResult",
    "Timing",
    "Row",
    "RunRecord",
    "Recorder",
    "sample_active",
    "init_clients",
    "swift_step",
    "consensus_model",
    "consensus_distance",
    "run_probabilistic",
    "run_event_driven",
    "write_vector",
]

CSV_COLUMNS = ["t", "sim_time_s", "global_loss", "consensus_dist", "avg_events", "broadcasts", "algorithm"]


class DivergenceError(RuntimeError):
    """The global loss blew past the divergence guard."""


@dataclass(frozen=True)
class CommunicationSet:
    """Counter values ``c`` with ``c mod (s+1) == 0``."""

    s: int

    def __post_init__(self) -> None:
        if self.s < 0:
            raise ValueError(f"communication period s must be >= 0, got {self.s}")

    def __contains__(self, c: int) -> bool:
        return c % (self.s + 1) == 0


class Mailbox:
    """Latest-value registers, one slot per sender.

    A write replaces the previous value; a read never blocks. Each slot has
    a single writer (its sender), so in a threaded setting a plain
    reference swap is enough.
    """

    def __init__(self, senders: Sequence[int], initial: np.ndarray):
        self._slots: dict[int, tuple[np.ndarray, int]] = {j: (initial, 0) for j in senders}

    @property
    def senders(self) -> tuple[int, ...]:
        return tuple(self._slots)

    def put(self, sender: int, model: np.ndarray, stamp: int) -> None:
        self._slots[sender] = (model, stamp)

    def get(self, sender: int) -> np.ndarray:
        return self._slots[sender][0]

    def stamp(self, sender: int) -> int:
        return self._slots[sender][1]

    def __len__(self) -> int:
        return len(self._slots)


@dataclass
class ClientState:
    model: np.ndarray
    mailbox: Mailbox
    counter: int = 1
    subscribers: tuple[int, ...] = ()  # clients whose averaging uses this model


@dataclass(frozen=True)
class StepResult:
    averaged: bool
    broadcasts: int
    gradient: np.ndarray


def init_clients(vectors: Sequence[CommunicationVector], x0: np.ndarray) -> list[ClientState]:
    """Every client starts at ``x0``; unheard-from mailbox slots also hold ``x0``."""
    n = len(vectors)
    x0 = np.array(x0, dtype=float)
    x0.setflags(write=False)
    sources = [tuple(k for k in range(n) if k != i and vectors[i].w[k] != 0.0) for i in range(n)]
    subscribers = [tuple(k for k in range(n) if i in sources[k]) for i in range(n)]
    return [
        ClientState(model=x0.copy(), mailbox=Mailbox(sources[i], x0), subscribers=subscribers[i])
        for i in range(n)
    ]


def sample_active(p: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of one client index from ``p``."""
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    return min(int(np.searchsorted(cdf, u, side="right")), len(p) - 1)


def swift_step(
    clients: list[ClientState],
    active: int,
    vectors: Sequence[CommunicationVector],
    cs: CommunicationSet,
    gamma: float,
    oracle: GradientOracle,
    stamp: int = 0,
) -> StepResult:
    """One global iteration for ``active``; all other models stay put.

    The new model is published to every subscriber's mailbox as soon as it
    exists, so mailboxes always hold each neighbour's latest model.
    """
    me = clients[active]
    x = me.model
    g = oracle.stochastic_gradient(x)
    averaged = me.counter in cs
    if averaged:
        w = vectors[active].w
        half = w[active] * x
        for k in me.mailbox.senders:
            half = half + w[k] * me.mailbox.get(k)
    else:
        half = x
    new = half - gamma * g
    new.setflags(write=False)
    me.model = new
    for k in me.subscribers:
        clients[k].mailbox.put(active, new, stamp)
    me.counter += 1
    return StepResult(averaged=averaged, broadcasts=len(me.subscribers), gradient=g)


def consensus_model(clients: Sequence[ClientState]) -> np.ndarray:
    return np.mean([c.model for c in clients], axis=0)


def consensus_distance(models: np.ndarray, p: np.ndarray) -> float:
    """``sum_i p_i ||xbar - x_i||^2`` with ``xbar`` the unweighted mean."""
    xbar = models.mean(axis=0)
    return float(np.sum(p * np.sum((models - xbar) ** 2, axis=1)))


@dataclass(frozen=True)
class Timing:
    """Per-client compute time, communication time and slowdown multiplier (seconds)."""

    compute: np.ndarray
    comm: np.ndarray
    slowdown: np.ndarray

    def __post_init__(self) -> None:
        for name in ("compute", "comm", "slowdown"):
            arr = getattr(self, name)
            if np.any(np.asarray(arr) <= 0):
                raise ValueError(f"timing {name} must be > 0")

    @classmethod
    def uniform(cls, n: int, compute: float = 1.0, comm: float = 0.1, slow: dict[int, float] | None = None) -> Timing:
        slowdown = np.ones(n)
        for i, f in (slow or {}).items():
            slowdown[i] = f
        return cls(np.full(n, compute), np.full(n, comm), slowdown)

    @property
    def n(self) -> int:
        return len(self.compute)

    def with_comm(self, client: int, value: float) -> Timing:
        comm = np.array(self.comm, dtype=float)
        comm[client] = value
        return Timing(self.compute, comm, self.slowdown)


@dataclass(frozen=True)
class Row:
    t: int
    sim_time: float
    loss: float
    consensus_dist: float
    avg_events: int
    broadcasts: int


@dataclass
class RunRecord:
    algorithm: str
    rows: list[Row] = field(default_factory=list)
    client_updates: np.ndarray | None = None
    client_avg_events: np.ndarray | None = None
    client_comm_time: np.ndarray | None = None
    final_models: np.ndarray | None = None
    event_times: list[list[float]] | None = None
    grad_norm_sq: np.ndarray | None = None
    shadow_max_dev: float | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def final_loss(self) -> float:
        return self.rows[-1].loss

    @property
    def consensus(self) -> np.ndarray:
        return self.final_models.mean(axis=0)

    def time_to_threshold(self, threshold: float) -> Row | None:
        """First recorded row whose loss is at or below ``threshold``."""
        for r in self.rows:
            if r.loss <= threshold:
                return r
        return None

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow(
                    [r.t, repr(float(r.sim_time)), repr(float(r.loss)), repr(float(r.consensus_dist)), r.avg_events, r.broadcasts, self.algorithm]
                )


def write_vector(path: str | Path, x: np.ndarray) -> None:
    Path(path).write_text("\n".join(repr(float(v)) for v in x) + "\n")


class Recorder:
    """Evaluation rows plus the divergence guard."""

    def __init__(self, problem: Problem, record: RunRecord, divergence_factor: float = 1e6):
        self.problem = problem
        self.record = record
        self.factor = divergence_factor
        self.initial: float | None = None

    def log(self, t: int, sim_time: float, models: np.ndarray, avg_events: int, broadcasts: int) -> Row:
        xbar = models.mean(axis=0)
        loss = self.problem.loss(xbar)
        if self.initial is None:
            self.initial = loss
        limit = self.factor * max(self.initial, np.finfo(float).tiny)
        if not math.isfinite(loss) or loss > limit:
            raise DivergenceError(
                f"{self.record.algorithm}: global loss {loss:.3e} at t={t} exceeds "
                f"{self.factor:g} x initial loss {self.initial:.3e}"
            )
        row = Row(t, sim_time, loss, consensus_distance(models, self.problem.p), avg_events, broadcasts)
        self.record.rows.append(row)
        return row


def _initial_point(problem: Problem, x0: np.ndarray | None) -> np.ndarray:
    if x0 is not None:
        return np.asarray(x0, dtype=float)
    return problem.objective.initial_point(np.random.default_rng(0))


def run_probabilistic(
    problem: Problem,
    vectors: Sequence[CommunicationVector],
    cs: CommunicationSet,
    gamma: float,
    T: int,
    seed: int = 0,
    x0: np.ndarray | None = None,
    eval_every: int | None = None,
    shadow: bool = False,
    trace_grad: bool = False,
    divergence_factor: float = 1e6,
) -> RunRecord:
    """Sample ``i_t ~ p`` and apply :func:`swift_step` for ``t = 1..T``.

    ``shadow`` checks every step against ``X^{t+1} = X^t W_{i_t} - gamma G``
    and stores the worst entrywise deviation. ``trace_grad`` stores
    ``||grad f(xbar^t)||^2`` for ``t = 0..T-1``. There is no clock in this
    mode, so ``sim_time`` is NaN.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if gamma <= 0:
        raise ValueError("step size must be positive")
    n = problem.n
    sched = problem.reseed(seed)
    clients = init_clients(vectors, _initial_point(problem, x0))
    record = RunRecord(algorithm="swift")
    rec = Recorder(problem, record, divergence_factor)
    eval_every = eval_every or n
    updates = np.zeros(n, dtype=np.int64)
    avg = np.zeros(n, dtype=np.int64)
    broadcasts = 0
    models = np.array([c.model for c in clients])
    rec.log(0, math.nan, models, 0, 0)
    xbar = models.mean(axis=0)
    grads = np.empty(T) if trace_grad else None
    worst = 0.0

    for t in range(1, T + 1):
        if grads is not None:
            grads[t - 1] = float(np.sum(problem.gradient(xbar) ** 2))
        i = sample_active(problem.p, sched)
        before = models.copy() if shadow else None
        communicate = clients[i].counter in cs
        res = swift_step(clients, i, vectors, cs, gamma, problem.oracles[i], stamp=t)
        xbar = xbar + (clients[i].model - models[i]) / n
        models[i] = clients[i].model
        updates[i] += 1
        avg[i] += res.averaged
        broadcasts += res.broadcasts
        if shadow:
            g_pad = np.zeros_like(before)
            g_pad[i] = res.gradient
            expect = (before.T @ active_matrix(vectors, i, communicate)).T - gamma * g_pad
            worst = max(worst, float(np.max(np.abs(expect - models))))
        if t % eval_every == 0 or t == T:
            rec.log(t, math.nan, models, int(avg.sum()), broadcasts)
            xbar = models.mean(axis=0)

    record.client_updates = updates
    record.client_avg_events = avg
    record.client_comm_time = np.zeros(n)
    record.final_models = models
    record.grad_norm_sq = grads
    record.shadow_max_dev = worst if shadow else None
    return record


def run_event_driven(
    problem: Problem,
    vectors: Sequence[CommunicationVector],
    cs: CommunicationSet,
    gamma: float,
    T: int,
    timing: Timing,
    seed: int = 0,
    x0: np.ndarray | None = None,
    eval_every: int | None = None,
    divergence_factor: float = 1e6,
) -> RunRecord:
    """Discrete-event SWIFT: clients complete updates at their own pace.

    A client's update takes ``slowdown * compute``, plus its own ``comm``
    time when the update falls in the communication set. Completions are
    popped in time order (ties by client index) and each one runs
    :func:`swift_step`. Nothing a client does depends on another client's
    timing, so there is no barrier anywhere.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    n = problem.n
    if timing.n != n:
        raise ValueError(f"timing covers {timing.n} clients, problem has {n}")
    problem.reseed(seed)
    clients = init_clients(vectors, _initial_point(problem, x0))
    record = RunRecord(algorithm="swift")
    rec = Recorder(problem, record, divergence_factor)
    eval_every = eval_every or n

    def duration(i: int, counter: int) -> float:
        d = timing.slowdown[i] * timing.compute[i]
        if counter in cs:
            d += timing.comm[i]
        return float(d)

    queue = [(duration(i, 1), i) for i in range(n)]
    heapq.heapify(queue)
    updates = np.zeros(n, dtype=np.int64)
    avg = np.zeros(n, dtype=np.int64)
    comm_time = np.zeros(n)
    events: list[list[float]] = [[] for _ in range(n)]
    broadcasts = 0
    models = np.array([c.model for c in clients])
    rec.log(0, 0.0, models, 0, 0)

    for t in range(1, T + 1):
        now, i = heapq.heappop(queue)
        res = swift_step(clients, i, vectors, cs, gamma, problem.oracles[i], stamp=t)
        models[i] = clients[i].model
        updates[i] += 1
        avg[i] += res.averaged
        if res.averaged:
            comm_time[i] += timing.comm[i]
        broadcasts += res.broadcasts
        events[i].append(now)
        heapq.heappush(queue, (now + duration(i, clients[i].counter), i))
        if t % eval_every == 0 or t == T:
            rec.log(t, now, models, int(avg.sum()), broadcasts)

    record.client_updates = updates
    record.client_avg_events = avg
    record.client_comm_time = comm_time
    record.final_models = models
    record.event_times = events
    return record
