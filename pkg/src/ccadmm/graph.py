"""Undirected communication topology with a canonical directed-edge layout.

Every undirected edge {i, j} gives two directed edges (i, j) and (j, i).
Directed edges are indexed lexicographically, so the out-edges of node i
occupy one contiguous block ordered by neighbor id. The z-variables of the
agents and the rows of the aggregate matrices all follow this order.
"""

from __future__ import annotations

import json
from collections import deque
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DisconnectedError,
    DuplicateEdgeError,
    IndexOutOfRangeError,
    SelfLoopError,
)

__all__ = [
    "Graph",
    "new_graph",
    "neighbors",
    "random_connected_graph",
    "path_graph",
    "cycle_graph",
    "complete_graph",
]


@dataclass(frozen=True)
class Graph:
    """Connected undirected graph on nodes ``0..n-1``.

    Build instances with :func:`new_graph`; the constructor assumes the edge
    list is already canonical (sorted pairs ``i < j``, no duplicates).
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    _adj: tuple[tuple[int, ...], ...] = field(repr=False, compare=False)
    _directed: tuple[tuple[int, int], ...] = field(repr=False, compare=False)
    _index: dict = field(repr=False, compare=False)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self._adj)

    @property
    def num_directed_edges(self) -> int:
        """Total degree, equal to twice the number of undirected edges."""
        return len(self._directed)

    @property
    def directed_edges(self) -> tuple[tuple[int, int], ...]:
        return self._directed

    def neighbors(self, i: int) -> tuple[int, ...]:
        if not 0 <= i < self.n:
            raise IndexOutOfRangeError(f"node {i} not in 0..{self.n - 1}")
        return self._adj[i]

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))

    def edge_index(self, i: int, j: int) -> int:
        """Position of the directed edge (i, j) in the canonical ordering."""
        try:
            return self._index[(i, j)]
        except KeyError:
            raise IndexOutOfRangeError(f"({i}, {j}) is not an edge") from None

    def edge_offsets(self) -> np.ndarray:
        """Start of each node's out-edge block; length ``n + 1``."""
        return np.concatenate([[0], np.cumsum(self.degrees)]).astype(int)

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in self.edges]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> Graph:
        return new_graph(int(data["n"]), [tuple(e) for e in data["edges"]])

    @classmethod
    def from_json(cls, text: str) -> Graph:
        return cls.from_dict(json.loads(text))


def _is_connected(n: int, adj: list[list[int]]) -> bool:
    seen = [False] * n
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return all(seen)


def new_graph(n: int, edges: Iterable[tuple[int, int]]) -> Graph:
    """Validate an edge list and build the canonical graph.

    Raises
    ------
    IndexOutOfRangeError
        If an endpoint lies outside ``0..n-1``.
    SelfLoopError, DuplicateEdgeError
        On a pair ``(i, i)`` or an edge listed twice (in either orientation).
    DisconnectedError
        If some node is unreachable from node 0.
    """
    if n < 1:
        raise IndexOutOfRangeError(f"graph needs at least one node, got n={n}")
    canon: set[tuple[int, int]] = set()
    for e in edges:
        i, j = (int(v) for v in e)
        if not (0 <= i < n and 0 <= j < n):
            raise IndexOutOfRangeError(f"edge ({i}, {j}) has an endpoint outside 0..{n - 1}")
        if i == j:
            raise SelfLoopError(f"self-loop at node {i}")
        key = (min(i, j), max(i, j))
        if key in canon:
            raise DuplicateEdgeError(f"edge {key} listed more than once")
        canon.add(key)

    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in canon:
        adj[i].append(j)
        adj[j].append(i)
    for a in adj:
        a.sort()
    if not _is_connected(n, adj):
        raise DisconnectedError("graph is not connected")

    directed = tuple((i, j) for i in range(n) for j in adj[i])
    return Graph(
        n=n,
        edges=tuple(sorted(canon)),
        _adj=tuple(tuple(a) for a in adj),
        _directed=directed,
        _index={e: k for k, e in enumerate(directed)},
    )


def neighbors(g: Graph, i: int) -> list[int]:
    """Sorted neighbor list of node ``i``."""
    return list(g.neighbors(i))


def random_connected_graph(n: int, edge_prob: float, seed: int) -> Graph:
    """Erdős–Rényi graph united with a random spanning tree.

    The tree is a random recursive tree over a random node permutation, so the
    result is always connected; with ``edge_prob=0`` only the tree remains.
    """
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError(f"edge_prob must lie in [0, 1], got {edge_prob}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    edges: set[tuple[int, int]] = set()
    for k in range(1, n):
        u, v = int(order[k]), int(order[rng.integers(k)])
        edges.add((min(u, v), max(u, v)))
    draws = rng.random((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if draws[i, j] < edge_prob:
                edges.add((i, j))
    return new_graph(n, sorted(edges))


def path_graph(n: int) -> Graph:
    return new_graph(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n: int) -> Graph:
    """Ring on ``n`` nodes; for ``n <= 2`` this degenerates to a path."""
    if n <= 2:
        return path_graph(n)
    return new_graph(n, [(i, (i + 1) % n) for i in range(n)])


def complete_graph(n: int) -> Graph:
    return new_graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])
