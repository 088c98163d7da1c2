"""Command-line entry point and experiment orchestration.

Verbs::

    swiftfl run CONFIG
    swiftfl suite CONFIG [CONFIG ...]
    swiftfl ccs-check TOPOLOGY P
    swiftfl decay TOPOLOGY P T

Exit codes: 0 success, 1 validation error, 2 divergence.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import metropolis_weights, run_sync
from .config import OUTPUT_ENV, ConfigError, ExperimentConfig, load_config
from .engine import CommunicationSet, DivergenceError, RunRecord, Timing, run_event_driven, run_probabilistic, write_vector
from .learning import (
    LeastSquares,
    PartitionError,
    Problem,
    build_problem,
    load_csv,
    make_gaussian_mixture,
    make_linear_regression,
    partition_class_cyclic,
    partition_degree,
    partition_iid,
    theorem_min_iterations,
    theorem_step_size,
)
from .topology import Topology, TopologyError, load_edge_list, make_complete, make_path, make_ring, make_ring_of_cliques, make_star, parse_topology
from .weights import (
    CCSError,
    ccs,
    decay_check,
    expected_matrix,
    format_diagnostics,
    spectral,
    uniform_influence,
    validate_influence,
    verify_expectation,
    write_vectors,
)

__all__ = ["Summary", "build_topology", "build_experiment_problem", "run_experiment", "run_suite", "main", "SUITE_COLUMNS"]

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2

SUITE_COLUMNS = [
    "config",
    "name",
    "algorithm",
    "mode",
    "status",
    "final_loss",
    "sim_time_s",
    "avg_events",
    "broadcasts",
    "threshold",
    "threshold_t",
    "threshold_sim_time_s",
    "error",
]


@dataclass
class Summary:
    name: str
    algorithm: str
    mode: str
    T: int
    gamma: float
    final_loss: float
    f_star: float | None
    threshold: float | None
    threshold_t: int | None
    threshold_sim_time: float | None
    total_avg_events: int
    total_broadcasts: int
    final_sim_time: float
    comm_time: np.ndarray
    rho: float
    nu: float
    rho_nu: float
    theorem_T_min: float

    def lines(self) -> list[str]:
        def fmt(v) -> str:
            return "n/a" if v is None else (f"{v:.10g}" if isinstance(v, float) else str(v))

        return [
            f"name: {self.name}",
            f"algorithm: {self.algorithm}",
            f"mode: {self.mode}",
            f"iterations: {self.T}",
            f"step_size: {self.gamma:.10g}",
            f"final_loss: {self.final_loss:.10g}",
            f"f_star: {fmt(self.f_star)}",
            f"threshold: {fmt(self.threshold)}",
            f"time_to_threshold_t: {fmt(self.threshold_t)}",
            f"time_to_threshold_sim_s: {fmt(self.threshold_sim_time)}",
            f"final_sim_time_s: {self.final_sim_time:.10g}",
            f"total_avg_events: {self.total_avg_events}",
            f"total_broadcasts: {self.total_broadcasts}",
            "comm_time_per_client_s: " + " ".join(f"{c:.6g}" for c in self.comm_time),
            f"rho: {self.rho:.12g}",
            f"nu: {self.nu:.17g}",
            f"rho_nu: {self.rho_nu:.6e}",
            f"theorem_T_min: {self.theorem_T_min:.6e}",
        ]


def build_topology(cfg: ExperimentConfig) -> Topology:
    kind = cfg.topology
    if kind == "edges":
        t = load_edge_list(cfg.edges, n=cfg.n)
    elif kind == "ring":
        t = make_ring(cfg.n)
    elif kind == "ring_of_cliques":
        t = make_ring_of_cliques(cfg.n, cfg.clusters)
    elif kind == "complete":
        t = make_complete(cfg.n)
    elif kind == "star":
        t = make_star(cfg.n)
    else:
        t = make_path(cfg.n)
    if t.n != cfg.n:
        raise ConfigError(f"topology.n: topology has {t.n} clients, config says {cfg.n}")
    return t


def build_experiment_problem(cfg: ExperimentConfig) -> Problem:
    total = cfg.n * cfg.samples_per_client
    if cfg.dataset == "synthetic_regression":
        ds, _ = make_linear_regression(total, cfg.features, cfg.noise, seed=cfg.data_seed)
    elif cfg.dataset == "gaussian_mixture":
        ds = make_gaussian_mixture(total, cfg.classes, cfg.features, cfg.separation, seed=cfg.data_seed)
    else:
        ds = load_csv(cfg.data_path, classification=cfg.objective != "least_squares")
    try:
        if cfg.partition == "iid":
            part = partition_iid(ds, cfg.n, seed=cfg.data_seed)
        elif cfg.partition == "class_cyclic":
            part = partition_class_cyclic(ds, cfg.n)
        else:
            part = partition_degree(ds, cfg.n, cfg.degree, seed=cfg.data_seed)
    except PartitionError as exc:
        raise ConfigError(f"data.partition: {exc}") from exc
    return build_problem(ds, part, cfg.objective, cfg.batch_size, cfg.seed, p=cfg.influence_vector(), hidden=cfg.hidden)


def _mixing_matrix(cfg: ExperimentConfig, t: Topology, vectors) -> np.ndarray:
    if cfg.algorithm == "swift":
        return expected_matrix(vectors, cfg.influence_vector())
    return metropolis_weights(t)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> tuple[RunRecord, Summary]:
    """Run one configured experiment and write its CSV, summary and consensus vector.

    Outputs go to ``<dir>/<name>.csv``, ``<name>.summary.txt`` and
    ``<name>.consensus.txt`` (plus ``<name>.vectors.txt`` for SWIFT).
    """
    t = build_topology(cfg)
    problem = build_experiment_problem(cfg)
    p = cfg.influence_vector()
    vectors = ccs(t, p) if cfg.algorithm == "swift" else None
    diag = spectral(_mixing_matrix(cfg, t, vectors), t.n)

    x0 = problem.objective.initial_point(np.random.default_rng(cfg.seed))
    f0 = problem.loss(x0)
    f_star: float | None = None
    if isinstance(problem.objective, LeastSquares):
        _, f_star = problem.optimum()
    delta_f = f0 - (f_star if f_star is not None else 0.0)
    L = problem.lipschitz()
    if cfg.step_size == "auto":
        gamma = 1.0 / (2.0 * L)
    elif cfg.step_size == "theorem":
        gamma = theorem_step_size(cfg.batch_size, cfg.n, delta_f, cfg.iterations, L)
    else:
        gamma = float(cfg.step_size)

    timing = None
    if cfg.mode == "event":
        timing = Timing(cfg.per_client("compute"), cfg.per_client("comm"), cfg.per_client("slowdown"))
    if cfg.algorithm == "swift":
        cs = CommunicationSet(cfg.s)
        if timing is None:
            record = run_probabilistic(problem, vectors, cs, gamma, cfg.iterations, seed=cfg.seed, x0=x0, eval_every=cfg.eval_every)
        else:
            record = run_event_driven(problem, vectors, cs, gamma, cfg.iterations, timing, seed=cfg.seed, x0=x0, eval_every=cfg.eval_every)
    else:
        record = run_sync(
            problem, t, gamma, cfg.iterations, algorithm=cfg.algorithm, I1=cfg.I1, I2=cfg.I2, seed=cfg.seed, timing=timing, x0=x0
        )

    if cfg.threshold is not None:
        threshold = cfg.threshold
    elif f_star is not None:
        threshold = f_star + cfg.threshold_gap
    else:
        threshold = None
    hit = record.time_to_threshold(threshold) if threshold is not None else None
    last = record.rows[-1]
    summary = Summary(
        name=cfg.name,
        algorithm=cfg.algorithm,
        mode=cfg.mode,
        T=cfg.iterations,
        gamma=gamma,
        final_loss=record.final_loss,
        f_star=f_star,
        threshold=threshold,
        threshold_t=hit.t if hit else None,
        threshold_sim_time=hit.sim_time if hit and not math.isnan(hit.sim_time) else None,
        total_avg_events=last.avg_events,
        total_broadcasts=last.broadcasts,
        final_sim_time=last.sim_time,
        comm_time=record.client_comm_time,
        rho=diag.rho,
        nu=diag.nu,
        rho_nu=diag.rho_nu,
        theorem_T_min=theorem_min_iterations(L, cfg.batch_size, delta_f, diag.rho_nu, cfg.n, float(np.max(p))),
    )
    if write:
        out = cfg.resolved_output_dir()
        out.mkdir(parents=True, exist_ok=True)
        record.write_csv(out / f"{cfg.name}.csv")
        (out / f"{cfg.name}.summary.txt").write_text("\n".join(summary.lines()) + "\n")
        write_vector(out / f"{cfg.name}.consensus.txt", record.consensus)
        if vectors is not None:
            write_vectors(out / f"{cfg.name}.vectors.txt", vectors)
    return record, summary


def _suite_row(path: str, cfg: ExperimentConfig | None, summary: Summary | None, error: str = "") -> dict:
    row = dict.fromkeys(SUITE_COLUMNS, "")
    row["config"] = path
    if cfg is not None:
        row.update(name=cfg.name, algorithm=cfg.algorithm, mode=cfg.mode)
    if summary is None:
        row.update(status="error", error=error)
        return row
    row.update(
        status="ok",
        final_loss=repr(float(summary.final_loss)),
        sim_time_s=repr(float(summary.final_sim_time)),
        avg_events=summary.total_avg_events,
        broadcasts=summary.total_broadcasts,
        threshold="" if summary.threshold is None else repr(summary.threshold),
        threshold_t="" if summary.threshold_t is None else summary.threshold_t,
        threshold_sim_time_s="" if summary.threshold_sim_time is None else repr(float(summary.threshold_sim_time)),
    )
    return row


def run_suite(paths: list[str], report: str | Path | None = None) -> list[dict]:
    """Run configs one after another; a failing config becomes an error row."""
    rows = []
    for path in paths:
        cfg = None
        try:
            cfg = load_config(path)
            _, summary = run_experiment(cfg)
            rows.append(_suite_row(path, cfg, summary))
        except (ConfigError, TopologyError, CCSError, DivergenceError, ValueError, OSError) as exc:
            rows.append(_suite_row(path, cfg, None, f"{type(exc).__name__}: {exc}"))
    if report is not None:
        report = Path(report)
        report.parent.mkdir(parents=True, exist_ok=True)
        with open(report, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SUITE_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return rows


def format_suite(rows: list[dict]) -> str:
    if not rows:
        return "(empty suite)"
    cols = ["name", "algorithm", "mode", "status", "final_loss", "sim_time_s", "avg_events", "threshold_t", "threshold_sim_time_s"]
    cells = [cols] + [[_short(r[c]) for c in cols] for r in rows]
    widths = [max(len(row[k]) for row in cells) for k in range(len(cols))]
    lines = ["  ".join(v.ljust(wd) for v, wd in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    for r in rows:
        if r["status"] == "error":
            lines.append(f"error in {r['config']}: {r['error']}")
    return "\n".join(lines)


def _short(v) -> str:
    if isinstance(v, str) and v:
        try:
            f = float(v)
        except ValueError:
            return v
        return "nan" if math.isnan(f) else f"{f:.6g}"
    return str(v)


def parse_influence(text: str, n: int) -> np.ndarray:
    """``uniform``, a comma-separated list, or a file of whitespace-separated scores."""
    if text.strip().lower() == "uniform":
        return uniform_influence(n)
    path = Path(text)
    raw = path.read_text() if path.is_file() else text
    try:
        values = [float(v) for v in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"p: expected 'uniform', numbers or a file, got {text!r}") from exc
    return validate_influence(values, n, strict=True)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    _, summary = run_experiment(cfg)
    print("\n".join(summary.lines()))
    print(f"output_dir: {cfg.resolved_output_dir()}")
    return EXIT_OK


def _cmd_suite(args) -> int:
    report = args.report or Path(_output_root()) / "suite.csv"
    rows = run_suite(args.configs, report)
    print(format_suite(rows))
    print(f"report: {report}")
    return EXIT_OK


def _output_root() -> str:
    return os.environ.get(OUTPUT_ENV) or "runs"


def _cmd_ccs_check(args) -> int:
    t = parse_topology(args.topology)
    p = parse_influence(args.p, t.n)
    vectors = ccs(t, p)
    m = expected_matrix(vectors, p)
    report = verify_expectation(m, vectors, p)
    print(f"n: {t.n}")
    print("\n".join(report.lines()))
    print(format_diagnostics(spectral(m, t.n)))
    if args.out:
        write_vectors(args.out, vectors)
    return EXIT_OK if report.ok else EXIT_INVALID


def _cmd_decay(args) -> int:
    t = parse_topology(args.topology)
    p = parse_influence(args.p, t.n)
    if args.T < 0:
        raise ConfigError(f"T: must be >= 0, got {args.T}")
    m = expected_matrix(ccs(t, p), p)
    res = decay_check(m, args.T)
    print(f"rho: {res.rho:.12g}")
    step = max(1, args.T // 10)
    for k in range(0, args.T + 1):
        if k % step == 0 or k == args.T:
            print(f"T={k} measured={res.measured[k]:.6e} bound={res.bound[k]:.6e}")
    print(f"violations: {len(res.violations)}" + (f" at T={res.violations}" if res.violations else ""))
    return EXIT_OK if res.ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swiftfl", description="Wait-free decentralized FL simulator.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.set_defaults(func=_cmd_run)
    s = sub.add_parser("suite", help="run several configs and tabulate them")
    s.add_argument("configs", nargs="*")
    s.add_argument("--report", help="comparison CSV path (default <output dir>/suite.csv)")
    s.set_defaults(func=_cmd_suite)
    c = sub.add_parser("ccs-check", help="run coefficient selection and verify the expected matrix")
    c.add_argument("topology", help="ring:N, roc:N:K, complete:N, star:N, path:N or an edge-list file")
    c.add_argument("p", help="'uniform', comma-separated scores, or a file")
    c.add_argument("--out", help="write the coefficient vectors here")
    c.set_defaults(func=_cmd_ccs_check)
    d = sub.add_parser("decay", help="check the consensus decay bound up to horizon T")
    d.add_argument("topology")
    d.add_argument("p")
    d.add_argument("T", type=int)
    d.set_defaults(func=_cmd_decay)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, TopologyError, CCSError, PartitionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
