from __future__ import annotations

import numpy as np
import pytest

from swiftfl.learning import build_problem, make_linear_regression, partition_iid
from swiftfl.topology import random_connected


def random_corpus(count: int, seed: int = 0, max_n: int = 32):
    """Random connected graphs with random positive influence vectors.

    Half the draws use a uniform vector, the other half a Dirichlet draw
    floored at 1e-3 so every score stays positive.
    """
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(2, max_n + 1))
        t = random_connected(n, rng, edge_prob=float(rng.uniform(0.05, 0.6)))
        if rng.random() < 0.5:
            p = np.full(n, 1.0 / n)
        else:
            p = np.maximum(rng.dirichlet(np.ones(n)), 1e-3)
            p /= p.sum()
        yield t, p


def regression_problem(n: int, per_client: int = 200, d: int = 20, seed: int = 0, batch: int = 32):
    ds, _ = make_linear_regression(n * per_client, d, seed=0)
    return build_problem(ds, partition_iid(ds, n), "least_squares", batch, seed)


@pytest.fixture
def small_problem():
    return regression_problem(4, per_client=50, d=5)
