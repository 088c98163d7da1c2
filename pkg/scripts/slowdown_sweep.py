"""Simulated time-to-threshold of SWIFT vs D-SGD on a 16-client ring with one slow client.

    python3 scripts/slowdown_sweep.py --factors 1 2 4 --seeds 0 1 2
"""

from __future__ import annotations

import argparse

import numpy as np

from swiftfl import CommunicationSet, Timing, ccs, make_ring, run_event_driven, run_sync
from swiftfl.learning import build_problem, make_linear_regression, partition_iid


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--factors", type=float, nargs="+", default=[1.0, 2.0, 4.0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=400)
    ap.add_argument("--gap", type=float, default=1e-2)
    ap.add_argument("--comm", type=float, default=0.1)
    args = ap.parse_args()

    n = args.n
    topo = make_ring(n)
    ds, _ = make_linear_regression(200 * n, seed=0)
    part = partition_iid(ds, n)
    print(f"{'slowdown':>8} {'seed':>4} {'swift_s':>10} {'dsgd_s':>10} {'ratio':>6}")
    for factor in args.factors:
        ratios = []
        for seed in args.seeds:
            problem = build_problem(ds, part, "least_squares", 32, seed)
            _, f_star = problem.optimum()
            threshold = f_star + args.gap
            gamma = 1.0 / (2.0 * problem.lipschitz())
            timing = Timing.uniform(n, compute=1.0, comm=args.comm, slow={0: factor})
            T = args.epochs * n
            sw = run_event_driven(problem, ccs(topo, problem.p), CommunicationSet(0), gamma, T, timing, seed=seed)
            ds_run = run_sync(problem, topo, gamma, T, "dsgd", seed=seed, timing=timing)
            a, b = sw.time_to_threshold(threshold), ds_run.time_to_threshold(threshold)
            if a is None or b is None:
                print(f"{factor:8g} {seed:4d} threshold not reached")
                continue
            ratios.append(a.sim_time / b.sim_time)
            print(f"{factor:8g} {seed:4d} {a.sim_time:10.2f} {b.sim_time:10.2f} {ratios[-1]:6.3f}")
        if ratios:
            print(f"{factor:8g} mean ratio {np.mean(ratios):.3f}")


if __name__ == "__main__":
    main()
