"""Experiment configuration: an INI-style ``key = value`` file with sections.

Example::

    [experiment]
    algorithm = swift
    mode = event
    iterations = 20000
    seed = 0

    [topology]
    kind = ring
    n = 16

    [timing]
    slow_clients = 0:4

Unknown sections or keys are rejected so typos surface early.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "OUTPUT_ENV"]

OUTPUT_ENV = "SWIFTFL_OUTPUT_DIR"

ALGORITHMS = ("swift", "dsgd", "pasgd", "ldsgd")
MODES = ("probabilistic", "event")
TOPOLOGIES = ("ring", "ring_of_cliques", "complete", "star", "path", "edges")
DATASETS = ("synthetic_regression", "gaussian_mixture", "csv")
PARTITIONS = ("iid", "class_cyclic", "degree")
OBJECTIVES = ("least_squares", "logistic", "mlp")

_SCHEMA: dict[str, set[str]] = {
    "experiment": {"name", "algorithm", "mode", "seed", "iterations", "epochs"},
    "topology": {"kind", "n", "clusters", "edges"},
    "influence": {"p"},
    "communication": {"s", "i1", "i2"},
    "data": {"dataset", "path", "samples_per_client", "features", "classes", "noise", "separation", "data_seed", "partition", "degree"},
    "objective": {"kind", "batch_size", "step_size", "hidden"},
    "timing": {"compute", "comm", "slowdown", "slow_clients"},
    "output": {"dir", "threshold", "threshold_gap", "eval_every"},
}


class ConfigError(ValueError):
    """A config value is missing, malformed or inconsistent. The message names the field."""


@dataclass
class ExperimentConfig:
    name: str = "run"
    algorithm: str = "swift"
    mode: str = "probabilistic"
    seed: int = 0
    iterations: int = 10_000
    topology: str = "ring"
    n: int = 16
    clusters: int = 3
    edges: str | None = None
    influence: str | list[float] = "uniform"
    s: int = 0
    I1: float = 0
    I2: int = 1
    dataset: str = "synthetic_regression"
    data_path: str | None = None
    samples_per_client: int = 200
    features: int = 20
    classes: int = 10
    noise: float = 0.1
    separation: float = 1.0
    data_seed: int = 0
    partition: str = "iid"
    degree: float = 0.0
    objective: str = "least_squares"
    batch_size: int = 32
    step_size: str | float = "auto"
    hidden: int = 32
    compute: list[float] = field(default_factory=lambda: [1.0])
    comm: list[float] = field(default_factory=lambda: [0.1])
    slowdown: list[float] = field(default_factory=lambda: [1.0])
    output_dir: str = "runs"
    threshold: float | None = None
    threshold_gap: float = 1e-2
    eval_every: int | None = None
    source: str | None = None

    def influence_vector(self) -> np.ndarray:
        if self.influence == "uniform":
            return np.full(self.n, 1.0 / self.n)
        return np.asarray(self.influence, dtype=float)

    def per_client(self, name: str) -> np.ndarray:
        vals = getattr(self, name)
        return np.full(self.n, vals[0]) if len(vals) == 1 else np.asarray(vals, dtype=float)

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)

    def validate(self) -> ExperimentConfig:
        def need(cond: bool, fld: str, msg: str) -> None:
            if not cond:
                raise ConfigError(f"{fld}: {msg}")

        need(self.algorithm in ALGORITHMS, "experiment.algorithm", f"must be one of {ALGORITHMS}, got {self.algorithm!r}")
        need(self.mode in MODES, "experiment.mode", f"must be one of {MODES}, got {self.mode!r}")
        need(self.iterations >= 1, "experiment.iterations", "must be >= 1")
        need(self.topology in TOPOLOGIES, "topology.kind", f"must be one of {TOPOLOGIES}, got {self.topology!r}")
        need(self.n >= 1, "topology.n", "must be >= 1")
        if self.topology == "edges":
            need(bool(self.edges), "topology.edges", "an edge-list path is required for kind = edges")
        if self.topology == "ring_of_cliques":
            need(self.clusters >= 2 and self.n >= 2 * self.clusters, "topology.clusters", "needs clusters >= 2 and n >= 2*clusters")
        if self.influence != "uniform":
            p = np.asarray(self.influence, dtype=float)
            need(p.size == self.n, "influence.p", f"has {p.size} entries, expected n = {self.n}")
            need(bool(np.all(p > 0)), "influence.p", "every score must be > 0")
            need(abs(p.sum() - 1.0) <= 1e-9, "influence.p", f"must sum to 1, sums to {p.sum():.12g}")
        need(self.s >= 0, "communication.s", "must be >= 0")
        need(self.I1 >= 0, "communication.I1", "must be >= 0")
        need(self.I2 >= 1, "communication.I2", "must be >= 1")
        if self.algorithm == "ldsgd":
            need(not math.isinf(self.I1), "communication.I1", "must be finite for ldsgd")
        need(self.dataset in DATASETS, "data.dataset", f"must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset == "csv":
            need(bool(self.data_path), "data.path", "required for dataset = csv")
        need(self.samples_per_client >= 1, "data.samples_per_client", "must be >= 1")
        need(self.partition in PARTITIONS, "data.partition", f"must be one of {PARTITIONS}, got {self.partition!r}")
        need(0.0 <= self.degree <= 1.0, "data.degree", f"must lie in [0, 1], got {self.degree}")
        if self.partition != "iid":
            need(self.dataset != "synthetic_regression", "data.partition", "class-based partitions need a classification dataset")
        need(self.objective in OBJECTIVES, "objective.kind", f"must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.objective == "least_squares":
            need(self.dataset != "gaussian_mixture", "objective.kind", "least_squares needs a regression dataset")
        elif self.dataset == "synthetic_regression":
            raise ConfigError(f"objective.kind: {self.objective} needs a classification dataset")
        need(self.batch_size >= 1, "objective.batch_size", "must be >= 1")
        if isinstance(self.step_size, str):
            need(self.step_size in ("auto", "theorem"), "objective.step_size", "must be 'auto', 'theorem' or a positive number")
        else:
            need(self.step_size > 0, "objective.step_size", "must be positive")
        for name in ("compute", "comm", "slowdown"):
            vals = getattr(self, name)
            need(len(vals) in (1, self.n), f"timing.{name}", f"needs 1 or n = {self.n} values, got {len(vals)}")
            need(all(v > 0 for v in vals), f"timing.{name}", "values must be > 0")
        need(self.threshold_gap > 0, "output.threshold_gap", "must be positive")
        if self.eval_every is not None:
            need(self.eval_every >= 1, "output.eval_every", "must be >= 1")
        return self


def _floats(text: str, fld: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"{fld}: expected numbers, got {text!r}") from exc


def _typed(section: configparser.SectionProxy, key: str, kind, fld: str):
    raw = section.get(key)
    try:
        if kind is float and raw.strip().lower() in ("inf", "infinity"):
            return math.inf
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{fld}: expected {kind.__name__}, got {raw!r}") from exc


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from exc

    for sec in parser.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"{sec}: unknown section")
        for key in parser[sec]:
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"{sec}.{key}: unknown key")

    cfg = ExperimentConfig(source=source)
    get = parser.get

    def has(sec: str, key: str) -> bool:
        return parser.has_option(sec, key)

    if "experiment" in parser:
        sec = parser["experiment"]
        cfg.name = sec.get("name", cfg.name)
        cfg.algorithm = sec.get("algorithm", cfg.algorithm).strip().lower()
        cfg.mode = sec.get("mode", cfg.mode).strip().lower()
        if "seed" in sec:
            cfg.seed = _typed(sec, "seed", int, "experiment.seed")
    if "topology" in parser:
        sec = parser["topology"]
        cfg.topology = sec.get("kind", cfg.topology).strip().lower()
        if "n" in sec:
            cfg.n = _typed(sec, "n", int, "topology.n")
        if "clusters" in sec:
            cfg.clusters = _typed(sec, "clusters", int, "topology.clusters")
        cfg.edges = sec.get("edges", cfg.edges)
    if has("experiment", "iterations") and has("experiment", "epochs"):
        raise ConfigError("experiment.epochs: give either iterations or epochs, not both")
    if has("experiment", "iterations"):
        cfg.iterations = _typed(parser["experiment"], "iterations", int, "experiment.iterations")
    elif has("experiment", "epochs"):
        cfg.iterations = cfg.n * _typed(parser["experiment"], "epochs", int, "experiment.epochs")
    if has("influence", "p"):
        raw = get("influence", "p").strip()
        cfg.influence = "uniform" if raw.lower() == "uniform" else _floats(raw, "influence.p")
    if "communication" in parser:
        sec = parser["communication"]
        if "s" in sec:
            cfg.s = _typed(sec, "s", int, "communication.s")
        if "i1" in sec:
            cfg.I1 = _typed(sec, "i1", float, "communication.I1")
        if "i2" in sec:
            cfg.I2 = _typed(sec, "i2", int, "communication.I2")
    if "data" in parser:
        sec = parser["data"]
        cfg.dataset = sec.get("dataset", cfg.dataset).strip().lower()
        cfg.data_path = sec.get("path", cfg.data_path)
        for key, kind in (("samples_per_client", int), ("features", int), ("classes", int), ("data_seed", int)):
            if key in sec:
                setattr(cfg, key, _typed(sec, key, kind, f"data.{key}"))
        for key in ("noise", "separation", "degree"):
            if key in sec:
                setattr(cfg, key, _typed(sec, key, float, f"data.{key}"))
        cfg.partition = sec.get("partition", cfg.partition).strip().lower()
    if "objective" in parser:
        sec = parser["objective"]
        cfg.objective = sec.get("kind", cfg.objective).strip().lower()
        if "batch_size" in sec:
            cfg.batch_size = _typed(sec, "batch_size", int, "objective.batch_size")
        if "hidden" in sec:
            cfg.hidden = _typed(sec, "hidden", int, "objective.hidden")
        if "step_size" in sec:
            raw = sec["step_size"].strip().lower()
            cfg.step_size = raw if raw in ("auto", "theorem") else _typed(sec, "step_size", float, "objective.step_size")
    if "timing" in parser:
        sec = parser["timing"]
        for key in ("compute", "comm", "slowdown"):
            if key in sec:
                setattr(cfg, key, _floats(sec[key], f"timing.{key}"))
        if "slow_clients" in sec:
            if len(cfg.slowdown) != 1:
                raise ConfigError("timing.slow_clients: cannot combine with a per-client slowdown list")
            slow = [cfg.slowdown[0]] * cfg.n
            for item in sec["slow_clients"].replace(",", " ").split():
                try:
                    idx, factor = item.split(":")
                    i, f = int(idx), float(factor)
                except ValueError as exc:
                    raise ConfigError(f"timing.slow_clients: expected 'client:factor', got {item!r}") from exc
                if not 0 <= i < cfg.n:
                    raise ConfigError(f"timing.slow_clients: client {i} out of range for n = {cfg.n}")
                slow[i] = f
            cfg.slowdown = slow
    if "output" in parser:
        sec = parser["output"]
        cfg.output_dir = sec.get("dir", cfg.output_dir)
        if "threshold" in sec:
            cfg.threshold = _typed(sec, "threshold", float, "output.threshold")
        if "threshold_gap" in sec:
            cfg.threshold_gap = _typed(sec, "threshold_gap", float, "output.threshold_gap")
        if "eval_every" in sec:
            cfg.eval_every = _typed(sec, "eval_every", int, "output.eval_every")
    if cfg.objective != "least_squares" and not has("data", "dataset"):
        cfg.dataset = "gaussian_mixture"
    return cfg.validate()


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    return parse_config(path.read_text(), source=str(path))
