"""Desk-scale datasets, partitions, objectives and stochastic gradient oracles."""

from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "Partition",
    "PartitionError",
    "LeastSquares",
    "Logistic",
    "MLP",
    "GradientOracle",
    "Problem",
    "make_gaussian_mixture",
    "make_linear_regression",
    "load_csv",
    "partition_iid",
    "partition_class_cyclic",
    "partition_degree",
    "lipschitz_estimate",
    "theorem_step_size",
    "theorem_min_iterations",
    "zeta_squared",
    "make_objective",
    "build_problem",
]


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int | None = None  # None for regression

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.n_classes is not None:
            if np.any(self.labels < 0) or np.any(self.labels >= self.n_classes):
                raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Partition:
    shards: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        allidx = np.concatenate(self.shards) if self.shards else np.array([], dtype=int)
        if np.unique(allidx).size != allidx.size:
            raise PartitionError("shards overlap")

    @property
    def n(self) -> int:
        return len(self.shards)

    def sizes(self) -> list[int]:
        return [len(s) for s in self.shards]


def make_gaussian_mixture(
    n_samples: int,
    n_classes: int = 10,
    n_features: int = 20,
    separation: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Balanced isotropic Gaussian blobs with unit within-class variance."""
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=separation, size=(n_classes, n_features))
    labels = np.arange(n_samples) % n_classes
    rng.shuffle(labels)
    features = means[labels] + rng.normal(size=(n_samples, n_features))
    return Dataset(features=features, labels=labels.astype(np.int64), n_classes=n_classes)


def make_linear_regression(
    n_samples: int,
    n_features: int = 20,
    noise: float = 0.1,
    seed: int = 0,
    feature_scale: float | None = None,
) -> tuple[Dataset, np.ndarray]:
    """Gaussian design with ``b = A x_true + noise``. Returns the data and ``x_true``.

    Features have standard deviation ``feature_scale`` (default
    ``1/sqrt(n_features)``, so rows have roughly unit norm).
    """
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(n_features) if feature_scale is None else feature_scale
    x_true = rng.normal(size=n_features)
    a = scale * rng.normal(size=(n_samples, n_features))
    b = a @ x_true + noise * rng.normal(size=n_samples)
    return Dataset(features=a, labels=b), x_true


def load_csv(path: str | Path, classification: bool | None = None) -> Dataset:
    """Header row, then numeric rows; the last column is the label.

    Labels are treated as classes when every label is a non-negative
    integer, unless ``classification`` says otherwise.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    data = np.asarray(rows, dtype=float)
    features, labels = data[:, :-1], data[:, -1]
    if classification is None:
        classification = bool(np.all(labels >= 0) and np.all(labels == np.round(labels)))
    if classification:
        ints = labels.astype(np.int64)
        return Dataset(features=features, labels=ints, n_classes=int(ints.max()) + 1)
    return Dataset(features=features, labels=labels)


# --- partitions -------------------------------------------------------------


def _shard_sizes(total: int, n: int) -> list[int]:
    base, extra = divmod(total, n)
    return [base + (1 if k < extra else 0) for k in range(n)]


def partition_iid(ds: Dataset, n: int, seed: int = 0) -> Partition:
    if len(ds) < n:
        raise PartitionError(f"{len(ds)} samples cannot fill {n} shards")
    perm = np.random.default_rng(seed).permutation(len(ds))
    return Partition(tuple(np.sort(s) for s in np.array_split(perm, n)))


def _class_pools(ds: Dataset) -> list[list[int]]:
    if ds.n_classes is None:
        raise PartitionError("class-based partitioning needs a classification dataset")
    return [list(np.flatnonzero(ds.labels == k)) for k in range(ds.n_classes)]


def partition_class_cyclic(ds: Dataset, n: int) -> Partition:
    """Each client draws from ``ceil(c/n)`` classes handed out cyclically.

    Client k owns classes ``k*n_c, ..., k*n_c + n_c - 1`` (mod c), each
    filling an equal part of its shard. When a class runs dry the shortfall
    is taken from the next class that still has samples.
    """
    pools = _class_pools(ds)
    c = len(pools)
    n_c = math.ceil(c / n)
    cursor = [0] * c
    shards = []
    for k, size in enumerate(_shard_sizes(len(ds), n)):
        own = [(k * n_c + j) % c for j in range(n_c)]
        taken: list[int] = []
        for cls, quota in zip(own, _shard_sizes(size, n_c)):
            src = cls
            while quota > 0:
                avail = len(pools[src]) - cursor[src]
                grab = min(avail, quota)
                taken.extend(pools[src][cursor[src] : cursor[src] + grab])
                cursor[src] += grab
                quota -= grab
                src = (src + 1) % c
        shards.append(np.sort(np.asarray(taken, dtype=np.int64)))
    return Partition(tuple(shards))


def partition_degree(ds: Dataset, n: int, degree: float, seed: int = 0) -> Partition:
    """A ``degree`` fraction of client k's shard comes from label ``k mod c``.

    The rest of each shard is dealt uniformly at random from whatever
    samples remain after every client has taken its single-label part.
    """
    if not 0.0 <= degree <= 1.0:
        raise PartitionError(f"degree must lie in [0, 1], got {degree}")
    pools = _class_pools(ds)
    c = len(pools)
    rng = np.random.default_rng(seed)
    pools = [list(rng.permutation(pool)) for pool in pools]
    sizes = _shard_sizes(len(ds), n)
    used = np.zeros(len(ds), dtype=bool)
    heads: list[list[int]] = []
    for k, size in enumerate(sizes):
        label = k % c
        want = int(round(degree * size))
        if want > len(pools[label]):
            raise PartitionError(
                f"client {k} needs {want} samples of label {label}, only {len(pools[label])} left"
            )
        heads.append(pools[label][:want])
        pools[label] = pools[label][want:]
        used[heads[-1]] = True
    rest = rng.permutation(np.flatnonzero(~used))
    shards = []
    pos = 0
    for head, size in zip(heads, sizes):
        need = size - len(head)
        shard = np.concatenate([np.asarray(head, dtype=np.int64), rest[pos : pos + need]])
        pos += need
        shards.append(np.sort(shard))
    return Partition(tuple(shards))


# --- objectives -------------------------------------------------------------


class LeastSquares:
    """``l(x, (a, b)) = 0.5 (a.x - b)^2``."""

    kind = "least_squares"

    def __init__(self, n_features: int):
        self.dim = n_features

    def loss(self, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
        r = a @ x - b
        return 0.5 * float(r @ r) / len(b)

    def gradient(self, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a.T @ (a @ x - b) / len(b)

    def per_sample_gradients(self, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a * (a @ x - b)[:, None]

    def curvature_factor(self) -> float:
        return 1.0

    def initial_point(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.zeros(self.dim)


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_sigmoid(z))


class Logistic:
    """Logistic regression without intercept.

    Two classes use the sigmoid form with labels mapped to -1/+1 and
    ``dim = n_features``; more classes use softmax cross-entropy with
    ``dim = n_features * n_classes`` (row-major weight matrix).
    """

    kind = "logistic"

    def __init__(self, n_features: int, n_classes: int = 2):
        if n_classes < 2:
            raise ValueError("logistic regression needs at least two classes")
        self.n_features = n_features
        self.n_classes = n_classes
        self.binary = n_classes == 2
        self.dim = n_features if self.binary else n_features * n_classes

    def _signs(self, b: np.ndarray) -> np.ndarray:
        return np.where(b > 0, 1.0, -1.0)

    def _probs(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        z = a @ x.reshape(self.n_features, self.n_classes)
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def loss(self, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
        if self.binary:
            return float(-np.mean(_log_sigmoid(self._signs(b) * (a @ x))))
        z = a @ x.reshape(self.n_features, self.n_classes)
        zmax = z.max(axis=1)
        lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
        return float(np.mean(lse - z[np.arange(len(b)), b.astype(np.int64)]))

    def gradient(self, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.binary:
            y = self._signs(b)
            return -(a.T @ (y * _sigmoid(-y * (a @ x)))) / len(b)
        probs = self._probs(x, a)
        probs[np.arange(len(b)), b.astype(np.int64)] -= 1.0
        return (a.T @ probs).ravel() / len(b)

    def per_sample_gradients(self, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.binary:
            y = self._signs(b)
            return -a * (y * _sigmoid(-y * (a @ x)))[:, None]
        probs = self._probs(x, a)
        probs[np.arange(len(b)), b.astype(np.int64)] -= 1.0
        return (a[:, :, None] * probs[:, None, :]).reshape(len(b), -1)

    def curvature_factor(self) -> float:
        return 0.25 if self.binary else 0.5

    def initial_point(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.zeros(self.dim)


class MLP:
    """One tanh hidden layer with a softmax output.

    Parameters are packed as ``[W1 (f x h), b1 (h), W2 (h x c), b2 (c)]``.
    """

    kind = "mlp"

    def __init__(self, n_features: int, n_classes: int, hidden: int = 32):
        if not 1 <= hidden <= 64:
            raise ValueError("hidden width must be between 1 and 64")
        self.f, self.c, self.h = n_features, n_classes, hidden
        self.dim = n_features * hidden + hidden + hidden * n_classes + n_classes

    def _unpack(self, x: np.ndarray):
        f, h, c = self.f, self.h, self.c
        o = 0
        w1 = x[o : o + f * h].reshape(f, h)
        o += f * h
        b1 = x[o : o + h]
        o += h
        w2 = x[o : o + h * c].reshape(h, c)
        o += h * c
        return w1, b1, w2, x[o : o + c]

    def _forward(self, x, a):
        w1, b1, w2, b2 = self._unpack(x)
        hid = np.tanh(a @ w1 + b1)
        z = hid @ w2 + b2
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return hid, z, e / e.sum(axis=1, keepdims=True)

    def loss(self, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
        _, z, _ = self._forward(x, a)
        lse = np.log(np.exp(z).sum(axis=1))
        return float(np.mean(lse - z[np.arange(len(b)), b.astype(np.int64)]))

    def gradient(self, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.per_sample_gradients(x, a, b).mean(axis=0)

    def per_sample_gradients(self, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _, _, w2, _ = self._unpack(x)
        hid, _, probs = self._forward(x, a)
        m = len(b)
        dz = probs.copy()
        dz[np.arange(m), b.astype(np.int64)] -= 1.0
        dhid = (dz @ w2.T) * (1.0 - hid**2)
        gw1 = a[:, :, None] * dhid[:, None, :]
        gw2 = hid[:, :, None] * dz[:, None, :]
        return np.concatenate(
            [gw1.reshape(m, -1), dhid, gw2.reshape(m, -1), dz], axis=1
        )

    def curvature_factor(self) -> float:
        raise ValueError("no closed-form smoothness bound for the MLP objective")

    def initial_point(self, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng(0)
        w1 = rng.normal(scale=1.0 / math.sqrt(self.f), size=self.f * self.h)
        w2 = rng.normal(scale=1.0 / math.sqrt(self.h), size=self.h * self.c)
        return np.concatenate([w1, np.zeros(self.h), w2, np.zeros(self.c)])


Objective = LeastSquares | Logistic | MLP


def make_objective(kind: str, ds: Dataset, hidden: int = 32) -> Objective:
    if kind == "least_squares":
        return LeastSquares(ds.n_features)
    if ds.n_classes is None:
        raise ValueError(f"objective {kind!r} needs class labels")
    if kind == "logistic":
        return Logistic(ds.n_features, ds.n_classes)
    if kind == "mlp":
        return MLP(ds.n_features, ds.n_classes, hidden)
    raise ValueError(f"unknown objective {kind!r}")


# --- oracles ----------------------------------------------------------------


@dataclass
class GradientOracle:
    """Stochastic gradients of one client's local objective.

    Mini-batches are drawn with replacement from the client's shard using
    the oracle's own generator.
    """

    objective: Objective
    features: np.ndarray
    labels: np.ndarray
    batch_size: int
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @property
    def dim(self) -> int:
        return self.objective.dim

    @property
    def size(self) -> int:
        return self.features.shape[0]

    def sample_batch(self) -> np.ndarray:
        return self.rng.integers(0, self.size, size=self.batch_size)

    def gradient(self, x: np.ndarray, batch: np.ndarray) -> np.ndarray:
        if len(batch) == 0:
            raise ValueError("empty mini-batch")
        return self.objective.gradient(x, self.features[batch], self.labels[batch])

    def stochastic_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.gradient(x, self.sample_batch())

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.objective.gradient(x, self.features, self.labels)

    def loss(self, x: np.ndarray) -> float:
        return self.objective.loss(x, self.features, self.labels)

    def per_sample_gradients(self, x: np.ndarray) -> np.ndarray:
        return self.objective.per_sample_gradients(x, self.features, self.labels)


def lipschitz_estimate(o: GradientOracle) -> float:
    """Smoothness constant of the client's full local objective.

    Least squares gives ``lambda_max(A^T A) / m`` exactly; for logistic
    objectives the same quantity scaled by the loss curvature bound is an
    upper bound.
    """
    lam = float(np.linalg.eigvalsh(o.features.T @ o.features)[-1])
    return o.objective.curvature_factor() * lam / o.size


def theorem_step_size(batch_size: int, n: int, delta_f: float, T: int, L: float) -> float:
    """``sqrt(M n^2 delta_f) / (sqrt(T L) + sqrt(M))``."""
    return math.sqrt(batch_size * n**2 * delta_f) / (math.sqrt(T * L) + math.sqrt(batch_size))


def theorem_min_iterations(L: float, batch_size: int, delta_f: float, rho_nu: float, n: int, p_max: float) -> float:
    """Iteration count from which the convergence-rate bound applies."""
    return 193.0**2 * L * batch_size * delta_f * rho_nu**2 * n**4 * p_max**2


@dataclass
class Problem:
    """Global objective ``f(x) = sum_i p_i f_i(x)`` over client oracles."""

    oracles: list[GradientOracle]
    p: np.ndarray
    objective: Objective

    @property
    def n(self) -> int:
        return len(self.oracles)

    @property
    def dim(self) -> int:
        return self.objective.dim

    def __post_init__(self) -> None:
        self._quad: tuple[np.ndarray, np.ndarray, float] | None = None
        if isinstance(self.objective, LeastSquares):
            # f(x) = 0.5 x'Hx - g'x + c, exact for any weighting
            h = sum(pi * o.features.T @ o.features / o.size for pi, o in zip(self.p, self.oracles))
            g = sum(pi * o.features.T @ o.labels / o.size for pi, o in zip(self.p, self.oracles))
            c = sum(0.5 * pi * float(o.labels @ o.labels) / o.size for pi, o in zip(self.p, self.oracles))
            self._quad = (h, g, c)

    def loss(self, x: np.ndarray) -> float:
        if self._quad is not None:
            h, g, c = self._quad
            return float(0.5 * x @ h @ x - g @ x + c)
        return float(sum(pi * o.loss(x) for pi, o in zip(self.p, self.oracles)))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        if self._quad is not None:
            h, g, _ = self._quad
            return h @ x - g
        return sum(pi * o.full_gradient(x) for pi, o in zip(self.p, self.oracles))

    def lipschitz(self) -> float:
        return max(lipschitz_estimate(o) for o in self.oracles)

    def reseed(self, seed: int) -> np.random.Generator:
        """Reset every client stream for ``seed``; returns the scheduler stream."""
        sched, streams = client_streams(seed, self.n)
        for o, rng in zip(self.oracles, streams):
            o.rng = rng
        return sched

    def optimum(self) -> tuple[np.ndarray, float]:
        """Exact minimiser for least squares via the weighted normal equations."""
        if not isinstance(self.objective, LeastSquares):
            raise ValueError("closed-form optimum is only available for least squares")
        h, g, _ = self._quad
        x_star = np.linalg.solve(h, g)
        return x_star, self.sum_loss(x_star)

    def sum_loss(self, x: np.ndarray) -> float:
        """Global loss as the explicit weighted sum of client losses."""
        return float(sum(pi * o.loss(x) for pi, o in zip(self.p, self.oracles)))


def zeta_squared(problem: Problem, x: np.ndarray) -> float:
    """``E_i ||grad f(x) - grad f_i(x)||^2`` with clients weighted by ``p``."""
    g = problem.gradient(x)
    return float(sum(pi * np.sum((g - o.full_gradient(x)) ** 2) for pi, o in zip(problem.p, problem.oracles)))


def client_streams(seed: int, n: int) -> tuple[np.random.Generator, list[np.random.Generator]]:
    """Scheduler stream and one independent stream per client for a master seed."""
    children = np.random.SeedSequence(seed).spawn(n + 1)
    return np.random.default_rng(children[0]), [np.random.default_rng(c) for c in children[1:]]


def build_problem(
    ds: Dataset,
    part: Partition,
    kind: str,
    batch_size: int,
    seed: int,
    p: Sequence[float] | np.ndarray | None = None,
    hidden: int = 32,
) -> Problem:
    """Wire one oracle per shard. Client streams come from :func:`client_streams`."""
    objective = make_objective(kind, ds, hidden)
    _, streams = client_streams(seed, part.n)
    oracles = [
        GradientOracle(objective, ds.features[s], ds.labels[s], batch_size, rng)
        for s, rng in zip(part.shards, streams)
    ]
    p_arr = np.full(part.n, 1.0 / part.n) if p is None else np.asarray(p, dtype=float)
    return Problem(oracles=oracles, p=p_arr, objective=objective)
