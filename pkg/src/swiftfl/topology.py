"""Undirected communication graphs.

A :class:`Topology` stores sorted neighbour lists. Construction checks
symmetry, self-loops and degree consistency; connectivity is checked
separately with :func:`is_connected` because several tests need to build
disconnected graphs on purpose.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Topology",
    "TopologyError",
    "make_ring",
    "make_ring_of_cliques",
    "make_complete",
    "make_star",
    "make_path",
    "from_edges",
    "load_edge_list",
    "random_connected",
    "is_connected",
    "parse_topology",
]


class TopologyError(ValueError):
    """Raised for invalid sizes or malformed graphs."""


@dataclass(frozen=True)
class Topology:
    """Undirected simple graph over clients ``0..n-1``.

    Attributes:
        n: Number of clients.
        adjacency: Per-client sorted tuple of neighbour indices.
        degrees: Per-client neighbour counts.
    """

    n: int
    adjacency: tuple[tuple[int, ...], ...]
    degrees: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise TopologyError(f"topology needs at least one client, got n={self.n}")
        if len(self.adjacency) != self.n or len(self.degrees) != self.n:
            raise TopologyError("adjacency/degrees length does not match n")
        for i, nbrs in enumerate(self.adjacency):
            if i in nbrs:
                raise TopologyError(f"self-loop at client {i}")
            if list(nbrs) != sorted(set(nbrs)):
                raise TopologyError(f"neighbour list of client {i} is not sorted/unique")
            if self.degrees[i] != len(nbrs):
                raise TopologyError(f"degree of client {i} is inconsistent")
            for j in nbrs:
                if not 0 <= j < self.n:
                    raise TopologyError(f"client {i} has out-of-range neighbour {j}")
                if i not in self.adjacency[j]:
                    raise TopologyError(f"asymmetric adjacency between {i} and {j}")

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.adjacency[i]

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as ``(i, j)`` pairs with ``i < j``."""
        return [(i, j) for i in range(self.n) for j in self.adjacency[i] if i < j]

    @property
    def num_edges(self) -> int:
        return sum(self.degrees) // 2

    def adjacency_matrix(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges():
            a[i, j] = a[j, i] = 1.0
        return a


def from_edges(n: int, edges: Iterable[tuple[int, int]]) -> Topology:
    """Build a topology from undirected edges. Duplicate edges are merged."""
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for i, j in edges:
        i, j = int(i), int(j)
        if i == j:
            raise TopologyError(f"self-loop at client {i}")
        if not (0 <= i < n and 0 <= j < n):
            raise TopologyError(f"edge ({i}, {j}) out of range for n={n}")
        nbrs[i].add(j)
        nbrs[j].add(i)
    adjacency = tuple(tuple(sorted(s)) for s in nbrs)
    return Topology(n=n, adjacency=adjacency, degrees=tuple(len(a) for a in adjacency))


def make_ring(n: int) -> Topology:
    """Ring where client i talks to ``(i-1) mod n`` and ``(i+1) mod n``.

    For ``n == 2`` the two clients share a single edge.
    """
    if n < 2:
        raise TopologyError(f"ring requires n >= 2, got {n}")
    return from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def make_ring_of_cliques(n: int, clusters: int) -> Topology:
    """Cliques of near-equal size joined in a ring by single bridge edges.

    The first ``n % clusters`` cliques get one extra member. Clique k's
    highest-index member is bridged to clique ``k+1``'s lowest-index member.
    """
    if clusters < 2 or n < 2 * clusters:
        raise TopologyError(
            f"ring of cliques needs clusters >= 2 and n >= 2*clusters, got n={n}, clusters={clusters}"
        )
    base, extra = divmod(n, clusters)
    groups: list[range] = []
    start = 0
    for k in range(clusters):
        size = base + (1 if k < extra else 0)
        groups.append(range(start, start + size))
        start += size
    edges = [(a, b) for g in groups for a in g for b in g if a < b]
    for k, g in enumerate(groups):
        nxt = groups[(k + 1) % clusters]
        edges.append((g[-1], nxt[0]))
    return from_edges(n, edges)


def make_complete(n: int) -> Topology:
    if n < 1:
        raise TopologyError(f"complete graph requires n >= 1, got {n}")
    return from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def make_star(n: int) -> Topology:
    """Client 0 is the hub."""
    if n < 2:
        raise TopologyError(f"star requires n >= 2, got {n}")
    return from_edges(n, [(0, j) for j in range(1, n)])


def make_path(n: int) -> Topology:
    if n < 1:
        raise TopologyError(f"path requires n >= 1, got {n}")
    return from_edges(n, [(i, i + 1) for i in range(n - 1)])


def random_connected(n: int, rng: np.random.Generator, edge_prob: float = 0.2) -> Topology:
    """Random spanning tree plus independent extra edges with ``edge_prob``."""
    if n < 1:
        raise TopologyError(f"need n >= 1, got {n}")
    order = rng.permutation(n)
    edges = [(int(order[k]), int(order[rng.integers(0, k)])) for k in range(1, n)]
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < edge_prob:
                edges.append((i, j))
    return from_edges(n, edges)


def is_connected(t: Topology) -> bool:
    """Breadth-first search from client 0."""
    seen = [False] * t.n
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        i = queue.popleft()
        for j in t.adjacency[i]:
            if not seen[j]:
                seen[j] = True
                count += 1
                queue.append(j)
    return count == t.n


def load_edge_list(path: str | Path, n: int | None = None) -> Topology:
    """Read ``i j`` pairs (0-indexed), one per line. ``#`` starts a comment.

    ``n`` defaults to one more than the largest index seen.
    """
    edges: list[tuple[int, int]] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise TopologyError(f"{path}:{lineno}: expected 'i j', got {raw!r}")
        edges.append((int(parts[0]), int(parts[1])))
    if n is None:
        n = 1 + max((max(e) for e in edges), default=0)
    return from_edges(n, edges)


def parse_topology(text: str) -> Topology:
    """Parse a short topology description.

    Accepted forms: ``ring:N``, ``roc:N:K`` (ring of K cliques),
    ``complete:N``, ``star:N``, ``path:N``, or a path to an edge-list file.
    """
    parts = text.split(":")
    kind = parts[0].lower()
    builders: dict[str, tuple[int, object]] = {
        "ring": (1, make_ring),
        "roc": (2, make_ring_of_cliques),
        "complete": (1, make_complete),
        "star": (1, make_star),
        "path": (1, make_path),
    }
    if kind in builders:
        arity, fn = builders[kind]
        if len(parts) != arity + 1:
            raise TopologyError(f"topology {text!r}: expected {arity} integer argument(s)")
        args: Sequence[int] = [int(x) for x in parts[1:]]
        return fn(*args)  # type: ignore[operator]
    if Path(text).is_file():
        return load_edge_list(text)
    raise TopologyError(f"unknown topology {text!r}")
