"""Final global loss of SWIFT and D-SGD as the degree of non-IIDness grows.

    python3 scripts/noniid_sweep.py --degrees 0 0.5 0.9 --seeds 0 1 2
"""

from __future__ import annotations

import argparse

import numpy as np

from swiftfl import CommunicationSet, ccs, make_ring_of_cliques, run_probabilistic, run_sync
from swiftfl.learning import build_problem, make_gaussian_mixture, partition_degree, partition_iid, zeta_squared


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--clusters", type=int, default=3)
    ap.add_argument("--degrees", type=float, nargs="+", default=[0.0, 0.5, 0.9])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--T", type=int, default=5000)
    args = ap.parse_args()

    n = args.n
    topo = make_ring_of_cliques(n, args.clusters)
    ds = make_gaussian_mixture(2000, seed=0)
    parts = {d: partition_iid(ds, n) if d == 0 else partition_degree(ds, n, d) for d in args.degrees}
    # one step size for every partition so only the data split varies
    L = max(build_problem(ds, part, "logistic", 32, 0).lipschitz() for part in parts.values())
    gamma = 1.0 / (2.0 * L)
    print(f"gamma = {gamma:.4g}")
    print(f"{'degree':>6} {'seed':>4} {'zeta2':>8} {'swift':>8} {'dsgd':>8}")
    for d, part in parts.items():
        for seed in args.seeds:
            problem = build_problem(ds, part, "logistic", 32, seed)
            x0 = problem.objective.initial_point(np.random.default_rng(0))
            z = zeta_squared(problem, x0)
            sw = run_probabilistic(problem, ccs(topo, problem.p), CommunicationSet(0), gamma, args.T, seed=seed)
            dd = run_sync(problem, topo, gamma, args.T, "dsgd", seed=seed)
            print(f"{d:6g} {seed:4d} {z:8.3f} {sw.final_loss:8.4f} {dd.final_loss:8.4f}")


if __name__ == "__main__":
    main()
