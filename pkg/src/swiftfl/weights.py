"""Communication coefficient selection and the matrices built from it.

Conventions: a client's communication vector ``w_i`` holds the weight it
places on every client's model when it averages, so ``w[j]`` of owner ``i``
is the coefficient ``w_{j,i}``. Stacked as columns, these vectors form the
matrix ``C`` with ``C[j, i] = w_{j,i}``; every column of ``C`` sums to one.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .topology import Topology, is_connected

__all__ = [
    "CCSError",
    "CommunicationVector",
    "ExpectationReport",
    "SpectralDiagnostics",
    "DecayResult",
    "validate_influence",
    "uniform_influence",
    "ccs",
    "coefficient_matrix",
    "active_matrix",
    "expected_matrix",
    "verify_expectation",
    "spectral",
    "nu_constant",
    "rho_nu",
    "decay_check",
    "write_vectors",
    "format_diagnostics",
]

ALGEBRA_TOL = 1e-12


class CCSError(ValueError):
    """Invalid input to coefficient selection, or a broken postcondition."""


@dataclass(frozen=True)
class CommunicationVector:
    owner: int
    w: np.ndarray

    def __post_init__(self) -> None:
        self.w.setflags(write=False)

    @property
    def self_weight(self) -> float:
        return float(self.w[self.owner])


def validate_influence(p: Sequence[float] | np.ndarray, n: int | None = None, *, strict: bool = False) -> np.ndarray:
    """Return ``p`` as a float array after checking it is a distribution.

    With ``strict`` every entry must be positive, which coefficient
    selection needs.
    """
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1:
        raise CCSError("influence vector must be one-dimensional")
    if n is not None and arr.size != n:
        raise CCSError(f"influence vector has length {arr.size}, expected {n}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise CCSError("influence scores must be finite and non-negative")
    if strict and np.any(arr <= 0):
        raise CCSError("coefficient selection requires every influence score to be > 0")
    if abs(arr.sum() - 1.0) > ALGEBRA_TOL:
        raise CCSError(f"influence scores sum to {arr.sum()!r}, not 1")
    return arr


def uniform_influence(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _is_uniform(p: np.ndarray) -> bool:
    return float(np.ptp(p)) <= 4 * np.finfo(float).eps * float(p.max())


def ccs(t: Topology, p: Sequence[float] | np.ndarray) -> list[CommunicationVector]:
    """Waterfall coefficient selection.

    Clients are handled level by level in order of decreasing degree. At a
    level every client first receives coefficients from its larger-degree
    neighbours, then equal-degree neighbours settle their mutual
    coefficients using the pairwise maxima of (assigned mass, remaining
    influence), and finally the leftover mass is split over self and the
    strictly smaller neighbours in proportion to influence. The value
    assigned to a smaller neighbour is mirrored into that neighbour's
    vector, which is what makes ``p_j w_{i,j} == p_i w_{j,i}``.

    Remaining influence always includes the client's own score.

    With non-uniform influence, several larger neighbours can jointly push
    more than ``1 - 1/n`` into one client. When that happens, or when a
    client's final self weight would land below ``1/n``, the client's
    off-diagonal coefficients are shrunk to total exactly ``1 - 1/n`` and
    their mirrors are shrunk by the same factor (see :func:`_shrink`). On
    inputs where the plain waterfall already satisfies every constraint
    this never triggers and the output is unchanged.
    """
    n = t.n
    p = validate_influence(p, n, strict=True)
    if not is_connected(t):
        raise CCSError("coefficient selection requires a connected topology")

    deg = t.degrees
    budget = 1.0 - 1.0 / n
    coef = np.zeros((n, n))
    if not _is_uniform(p):
        coef[np.arange(n), np.arange(n)] = 1.0 / n

    for level in sorted(set(deg), reverse=True):
        members = [i for i in range(n) if deg[i] == level]
        for i in members:
            if _off_diagonal_mass(coef, i) > budget + ALGEBRA_TOL:
                _shrink(coef, t, i, budget)
        # values before any tie exchange, shared with equal-degree neighbours
        s_w = {i: coef[:, i].sum() for i in members}
        s_p = {i: p[i] + sum(p[j] for j in t.adjacency[i] if deg[j] <= level) for i in members}

        for i in members:
            not_larger = [j for j in t.adjacency[i] if deg[j] <= level]
            if not not_larger:
                coef[i, i] += 1.0 - coef[:, i].sum()
                continue
            for j in (j for j in not_larger if deg[j] == level):
                sw_star = max(s_w[i], s_w[j])
                sp_star = max(s_p[i], s_p[j])
                coef[j, i] = (1.0 - sw_star) * p[j] / sp_star

        for i in members:
            if not any(deg[j] <= level for j in t.adjacency[i]):
                continue
            smaller = [j for j in t.adjacency[i] if deg[j] < level]
            left = 1.0 - coef[:, i].sum()
            sp = p[i] + sum(p[j] for j in smaller)
            coef[i, i] += left * p[i] / sp
            for j in smaller:
                coef[j, i] += left * p[j] / sp
                coef[i, j] = left * p[i] / sp

        for i in members:
            if coef[i, i] < 1.0 / n - ALGEBRA_TOL:
                _shrink(coef, t, i, budget)

    for i in range(n):
        if coef[i, i] < 1.0 / n - ALGEBRA_TOL or np.any(coef[:, i] < -ALGEBRA_TOL):
            raise CCSError(
                f"internal consistency: client {i} self weight {coef[i, i]:.6g} below 1/n "
                f"or negative coefficient"
            )
    return [CommunicationVector(owner=i, w=coef[:, i].copy()) for i in range(n)]


def _off_diagonal_mass(coef: np.ndarray, i: int) -> float:
    return float(coef[:, i].sum() - coef[i, i])


def _shrink(coef: np.ndarray, t: Topology, i: int, budget: float) -> None:
    """Scale client i's neighbour coefficients so they total ``budget``.

    Each mirror ``coef[i, j]`` is scaled by the same factor so the pairwise
    symmetry survives. Neighbours with degree >= d_i already hold final
    vectors, so the mass taken from them goes to their own diagonal;
    smaller neighbours have not been processed and simply receive less.
    """
    mass = _off_diagonal_mass(coef, i)
    if mass <= budget:
        return
    scale = budget / mass
    for j in t.adjacency[i]:
        coef[j, i] *= scale
        freed = coef[i, j] * (1.0 - scale)
        coef[i, j] -= freed
        if t.degrees[j] >= t.degrees[i]:
            coef[j, j] += freed
    coef[i, i] = 1.0 - coef[:, i].sum() + coef[i, i]


def coefficient_matrix(vectors: Sequence[CommunicationVector]) -> np.ndarray:
    """Stack vectors as columns: ``C[j, i] = w_{j,i}``."""
    n = len(vectors)
    c = np.empty((n, n))
    for v in vectors:
        c[:, v.owner] = v.w
    return c


def active_matrix(vectors: Sequence[CommunicationVector], active: int, communicate: bool) -> np.ndarray:
    """``I + (w_a - e_a) e_a^T`` when communicating, else the identity."""
    n = len(vectors)
    if not 0 <= active < n:
        raise IndexError(f"active client {active} out of range for n={n}")
    m = np.eye(n)
    if communicate:
        m[:, active] = vectors[active].w
    return m


def expected_matrix(vectors: Sequence[CommunicationVector], p: Sequence[float] | np.ndarray) -> np.ndarray:
    """Influence-weighted mean of all active matrices.

    Diagonal ``1 + p_i (w_{i,i} - 1)``, off-diagonal ``[i, j] = p_j w_{i,j}``.
    """
    p = np.asarray(p, dtype=float)
    c = coefficient_matrix(vectors)
    n = c.shape[0]
    m = c * p[np.newaxis, :]
    m[np.arange(n), np.arange(n)] = 1.0 + p * (np.diag(c) - 1.0)
    return m


@dataclass(frozen=True)
class ExpectationReport:
    symmetric: bool
    doubly_stochastic: bool
    column_stochastic_vectors: bool
    self_weight_floor: bool
    max_asymmetry: float
    max_row_sum_error: float
    max_col_sum_error: float
    max_vector_sum_error: float
    min_self_weight_margin: float

    @property
    def ok(self) -> bool:
        return self.symmetric and self.doubly_stochastic and self.column_stochastic_vectors and self.self_weight_floor

    def lines(self) -> list[str]:
        return [
            f"symmetric: {self.symmetric}",
            f"doubly_stochastic: {self.doubly_stochastic}",
            f"column_stochastic_vectors: {self.column_stochastic_vectors}",
            f"self_weight_floor: {self.self_weight_floor}",
            f"max_asymmetry: {self.max_asymmetry:.3e}",
            f"max_row_sum_error: {self.max_row_sum_error:.3e}",
            f"max_col_sum_error: {self.max_col_sum_error:.3e}",
            f"max_vector_sum_error: {self.max_vector_sum_error:.3e}",
            f"min_self_weight_margin: {self.min_self_weight_margin:.3e}",
        ]


def verify_expectation(
    m: np.ndarray,
    vectors: Sequence[CommunicationVector],
    p: Sequence[float] | np.ndarray,
    tol: float = ALGEBRA_TOL,
) -> ExpectationReport:
    """Check the expected matrix and the vectors behind it.

    ``max_asymmetry`` is the largest ``|p_j w_{i,j} - p_i w_{j,i}|``, which
    equals the largest entrywise asymmetry of ``m``.
    """
    p = np.asarray(p, dtype=float)
    c = coefficient_matrix(vectors)
    n = c.shape[0]
    scaled = c * p[np.newaxis, :]
    asym = float(np.max(np.abs(scaled - scaled.T))) if n else 0.0
    asym = max(asym, float(np.max(np.abs(m - m.T))))
    row_err = float(np.max(np.abs(m.sum(axis=1) - 1.0)))
    col_err = float(np.max(np.abs(m.sum(axis=0) - 1.0)))
    vec_err = float(np.max(np.abs(c.sum(axis=0) - 1.0)))
    margin = float(np.min(np.diag(c)) - 1.0 / n)
    return ExpectationReport(
        symmetric=asym <= tol,
        doubly_stochastic=row_err <= tol and col_err <= tol and bool(np.all(m >= -tol)),
        column_stochastic_vectors=vec_err <= tol and bool(np.all(c >= -tol)),
        self_weight_floor=margin >= -tol,
        max_asymmetry=asym,
        max_row_sum_error=row_err,
        max_col_sum_error=col_err,
        max_vector_sum_error=vec_err,
        min_self_weight_margin=margin,
    )


def nu_constant(n: int, b: int = 1) -> float:
    """``(1 - n^{-nB})^{1/B}``; rounds to 1.0 in double precision for n >= 14."""
    return (1.0 - _inv_power(n, b)) ** (1.0 / b)


def _inv_power(n: int, b: int) -> float:
    return math.exp(-n * b * math.log(n)) if n > 1 else 0.0


def _one_minus_nu_sq(n: int, b: int) -> float:
    # computed without forming nu, which loses everything to cancellation
    if n <= 1:
        return 1.0
    log_nu = math.log1p(-_inv_power(n, b)) / b
    return -math.expm1(2.0 * log_nu)


def rho_nu(rho: float, n: int, b: int = 1) -> float:
    if rho >= 1.0:
        return math.inf
    denom = _one_minus_nu_sq(n, b)
    if denom <= 0.0:
        return math.inf
    sr = math.sqrt(max(rho, 0.0))
    return (n - 1) / n * (7.0 / (2.0 * (1.0 - rho)) + sr / (1.0 - sr) ** 2 + 384.0 / denom)


@dataclass(frozen=True)
class SpectralDiagnostics:
    rho: float
    nu: float
    rho_nu: float
    eigenvalues: np.ndarray
    one_minus_nu_sq: float

    @property
    def mixing(self) -> bool:
        return self.rho < 1.0


def spectral(m: np.ndarray, n: int | None = None, b: int = 1) -> SpectralDiagnostics:
    """Mixing constants of a symmetric expected matrix.

    ``rho = max(|lambda_2|, |lambda_n|)`` of ``m^T m`` with eigenvalues in
    decreasing order. A value within 1e-9 of one is reported as exactly one
    and flagged as non-mixing.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0] if n is None else n
    if m.shape != (n, n):
        raise ValueError(f"matrix shape {m.shape} does not match n={n}")
    if np.max(np.abs(m - m.T)) > 1e-10:
        raise ValueError("spectral diagnostics need a symmetric matrix")
    eig = np.sort(np.linalg.eigvalsh(m.T @ m))[::-1]
    if n == 1:
        rho = 0.0
    else:
        rho = float(max(abs(eig[1]), abs(eig[-1])))
        if rho >= 1.0 - 1e-9:
            rho = 1.0
    return SpectralDiagnostics(
        rho=rho,
        nu=nu_constant(n, b),
        rho_nu=rho_nu(rho, n, b),
        eigenvalues=eig,
        one_minus_nu_sq=_one_minus_nu_sq(n, b),
    )


@dataclass(frozen=True)
class DecayResult:
    measured: np.ndarray  # measured[T'] for T' = 0..T
    bound: np.ndarray
    rho: float
    violations: list[int]

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def value(self) -> float:
        return float(self.measured[-1])


def decay_check(m: np.ndarray, T: int, rho: float | None = None) -> DecayResult:
    """Measure ``max_i ||1/n - m^T ... m e_i||^2`` for every horizon up to ``T``.

    Each horizon is compared with ``((n-1)/n) rho^T``. A horizon counts as a
    violation only if it exceeds the bound by more than double-precision
    rounding of the repeated product. Each column of the k-fold product is
    off by at most ``delta = n^1.5 (k+1) eps`` in norm, so the squared
    distance can move by ``2 sqrt(bound) delta + delta^2``. The bound is
    attained exactly when n = 2, so this allowance matters there.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if rho is None:
        rho = spectral(m).rho
    prod = np.eye(n)
    target = np.full((n, n), 1.0 / n)
    measured = np.empty(T + 1)
    bound = np.empty(T + 1)
    eps = np.finfo(float).eps
    violations: list[int] = []
    for k in range(T + 1):
        if k:
            prod = m.T @ prod
        measured[k] = float(np.max(np.sum((target - prod) ** 2, axis=0)))
        bound[k] = (n - 1) / n * rho**k
        delta = n**1.5 * (k + 1) * eps
        slack = 2.0 * math.sqrt(bound[k]) * delta + delta**2 + 1e-12 * bound[k]
        if measured[k] > bound[k] + slack:
            violations.append(k)
    return DecayResult(measured=measured, bound=bound, rho=rho, violations=violations)


def write_vectors(path: str | Path, vectors: Sequence[CommunicationVector]) -> None:
    """One row per owner, n space-separated coefficients."""
    rows = [" ".join(repr(float(x)) for x in v.w) for v in sorted(vectors, key=lambda v: v.owner)]
    Path(path).write_text("\n".join(rows) + "\n")


def read_vectors(path: str | Path) -> list[CommunicationVector]:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    return [CommunicationVector(owner=i, w=np.array([float(x) for x in r])) for i, r in enumerate(rows)]


def format_diagnostics(d: SpectralDiagnostics) -> str:
    return "\n".join(
        [
            f"rho: {d.rho:.12g}",
            f"nu: {d.nu:.17g}",
            f"one_minus_nu_sq: {d.one_minus_nu_sq:.6e}",
            f"rho_nu: {d.rho_nu:.6e}",
            f"mixing: {d.mixing}",
        ]
    )
