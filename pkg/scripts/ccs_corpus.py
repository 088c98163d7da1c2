"""Run coefficient selection over random connected graphs and report the worst invariant errors.

    python3 scripts/ccs_corpus.py --graphs 1000 --seed 0
"""

from __future__ import annotations

import argparse

import numpy as np

from swiftfl.topology import random_connected
from swiftfl.weights import ccs, decay_check, expected_matrix, verify_expectation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--graphs", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-n", type=int, default=32)
    ap.add_argument("--decay-T", type=int, default=100)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    worst = {"asym": 0.0, "row": 0.0, "vec": 0.0, "margin": np.inf}
    failures = decay_violations = 0
    for _ in range(args.graphs):
        n = int(rng.integers(2, args.max_n + 1))
        t = random_connected(n, rng, edge_prob=float(rng.uniform(0.05, 0.6)))
        p = rng.dirichlet(np.ones(n)) if rng.random() < 0.5 else np.full(n, 1.0 / n)
        p = np.maximum(p, 1e-3)
        p /= p.sum()
        vectors = ccs(t, p)
        m = expected_matrix(vectors, p)
        rep = verify_expectation(m, vectors, p)
        failures += not rep.ok
        worst["asym"] = max(worst["asym"], rep.max_asymmetry)
        worst["row"] = max(worst["row"], rep.max_row_sum_error, rep.max_col_sum_error)
        worst["vec"] = max(worst["vec"], rep.max_vector_sum_error)
        worst["margin"] = min(worst["margin"], rep.min_self_weight_margin)
        decay_violations += bool(decay_check(m, args.decay_T).violations)
    print(f"graphs: {args.graphs}  failures: {failures}  decay violations: {decay_violations}")
    for k, v in worst.items():
        print(f"worst {k}: {v:.3e}")


if __name__ == "__main__":
    main()
