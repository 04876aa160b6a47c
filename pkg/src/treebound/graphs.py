"""Undirected graphs, spanning trees and matrix-tree computations.

Edges keep the order (and orientation) they were given at construction; every
per-edge vector in the package is indexed against ``Graph.edges``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import InvalidGraphError, NoSpanningTreeError


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on nodes ``0 .. node_count - 1``."""

    node_count: int
    edges: tuple[tuple[int, int], ...]
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if self.node_count < 1:
            raise InvalidGraphError("a graph needs at least one node")
        edges = tuple((int(s), int(t)) for s, t in self.edges)
        seen = set()
        for s, t in edges:
            if not (0 <= s < self.node_count and 0 <= t < self.node_count):
                raise InvalidGraphError(f"edge ({s}, {t}) references a missing node")
            if s == t:
                raise InvalidGraphError(f"self-loop at node {s}")
            key = (min(s, t), max(s, t))
            if key in seen:
                raise InvalidGraphError(f"duplicate edge ({s}, {t})")
            seen.add(key)
        object.__setattr__(self, "edges", edges)
        adjacency = [[] for _ in range(self.node_count)]
        for e, (s, t) in enumerate(edges):
            adjacency[s].append((t, e))
            adjacency[t].append((s, e))
        object.__setattr__(self, "_adjacency", tuple(tuple(a) for a in adjacency))
        object.__setattr__(
            self,
            "_edge_index",
            {k: e for e, (s, t) in enumerate(edges) for k in ((s, t), (t, s))},
        )

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def neighbors(self, s: int) -> tuple[tuple[int, int], ...]:
        """``(neighbor, edge_index)`` pairs incident to node ``s``."""
        return self._adjacency[s]

    def degree(self, s: int) -> int:
        return len(self._adjacency[s])

    def edge_index(self, s: int, t: int) -> int:
        try:
            return self._edge_index[(s, t)]
        except KeyError:
            raise KeyError(f"no edge between {s} and {t}") from None

    def is_connected(self) -> bool:
        return count_components(self.node_count, self.edges) == 1

    def is_tree(self) -> bool:
        return self.edge_count == self.node_count - 1 and self.is_connected()

    def laplacian(self) -> np.ndarray:
        lap = np.zeros((self.node_count, self.node_count))
        for s, t in self.edges:
            lap[s, s] += 1.0
            lap[t, t] += 1.0
            lap[s, t] -= 1.0
            lap[t, s] -= 1.0
        return lap

    def without_edge(self, e: int) -> "Graph":
        edges = self.edges[:e] + self.edges[e + 1 :]
        return Graph(self.node_count, edges, name=f"{self.name}-e{e}")


def grid(rows: int, cols: int) -> Graph:
    """Grid graph with row-major node numbering; rightward edges precede downward ones per node."""
    if rows < 1 or cols < 1:
        raise InvalidGraphError("grid dimensions must be >= 1")
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    return Graph(rows * cols, tuple(edges), name=f"grid:{rows}x{cols}")


def complete(n: int) -> Graph:
    if n < 1:
        raise InvalidGraphError("complete graph needs n >= 1")
    edges = tuple(itertools.combinations(range(n), 2))
    return Graph(n, edges, name=f"complete:{n}")


def cycle(n: int) -> Graph:
    if n < 3:
        raise InvalidGraphError("a simple cycle needs n >= 3")
    edges = tuple((i, (i + 1) % n) for i in range(n))
    return Graph(n, edges, name=f"cycle:{n}")


def custom(node_count: int, edges: Iterable[Sequence[int]], name: str = "custom") -> Graph:
    return Graph(node_count, tuple(tuple(e) for e in edges), name=name)


def parse_graph_spec(spec: str) -> Graph:
    """Parse ``grid:RxC``, ``complete:N`` or ``cycle:N``."""
    kind, _, arg = spec.partition(":")
    try:
        if kind == "grid":
            rows, cols = arg.lower().split("x")
            return grid(int(rows), int(cols))
        if kind == "complete":
            return complete(int(arg))
        if kind == "cycle":
            return cycle(int(arg))
    except ValueError as exc:
        if isinstance(exc, InvalidGraphError):
            raise
        raise InvalidGraphError(f"malformed graph spec {spec!r}") from exc
    raise InvalidGraphError(f"unknown graph kind in {spec!r}")


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def count_components(node_count: int, edges: Iterable[tuple[int, int]]) -> int:
    uf = UnionFind(node_count)
    merges = sum(uf.union(s, t) for s, t in edges)
    return node_count - merges


@dataclass(frozen=True)
class SpanningTree:
    """A spanning tree given as a sorted tuple of edge indices into its graph."""

    edges: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(sorted(int(e) for e in self.edges)))

    def indicator(self, edge_count: int) -> np.ndarray:
        vec = np.zeros(edge_count)
        vec[list(self.edges)] = 1.0
        return vec

    def __contains__(self, e: int) -> bool:
        return e in self.edges


def is_spanning_tree(g: Graph, edge_subset: Iterable[int]) -> bool:
    subset = list(edge_subset)
    if len(subset) != g.node_count - 1 or len(set(subset)) != len(subset):
        return False
    uf = UnionFind(g.node_count)
    return all(uf.union(*g.edges[e]) for e in subset)


def max_weight_spanning_tree(g: Graph, weights: Sequence[float]) -> SpanningTree:
    """Kruskal's algorithm; ties are broken in favour of the lower edge index.

    Weights may be negative.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (g.edge_count,):
        raise ValueError(f"expected {g.edge_count} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("edge weights must be finite")
    order = sorted(range(g.edge_count), key=lambda e: (-w[e], e))
    uf = UnionFind(g.node_count)
    chosen = []
    for e in order:
        if uf.union(*g.edges[e]):
            chosen.append(e)
            if len(chosen) == g.node_count - 1:
                break
    if len(chosen) != g.node_count - 1:
        raise NoSpanningTreeError(f"graph {g.name} is disconnected")
    return SpanningTree(tuple(chosen))


def enumerate_spanning_trees(g: Graph, limit: int = 200_000) -> Iterator[SpanningTree]:
    """Yield every spanning tree by checking all (N-1)-edge subsets.

    Only meant for small graphs; raises ``ValueError`` when the number of
    candidate subsets exceeds ``limit``.
    """
    k = g.node_count - 1
    if math.comb(g.edge_count, k) > limit:
        raise ValueError(f"too many candidate edge subsets for {g.name}")
    for subset in itertools.combinations(range(g.edge_count), k):
        if is_spanning_tree(g, subset):
            yield SpanningTree(subset)


def _reduced_laplacian(g: Graph) -> np.ndarray:
    return g.laplacian()[:-1, :-1]


def count_spanning_trees(g: Graph) -> float | None:
    """Natural log of the number of spanning trees, or ``None`` if there are none.

    Uses the log-determinant of the Laplacian with its last row and column
    removed (LU with partial pivoting).
    """
    if not g.is_connected():
        return None
    if g.node_count == 1:
        return 0.0
    sign, logdet = np.linalg.slogdet(_reduced_laplacian(g))
    if sign <= 0:
        return None
    return float(logdet)


def spanning_tree_count_exact(g: Graph) -> int:
    """Exact integer tree count via fraction-free (Bareiss) elimination."""
    n = g.node_count - 1
    if n == 0:
        return 1
    lap = _reduced_laplacian(g)
    mat = [[int(round(v)) for v in row] for row in lap]
    sign = 1
    prev = 1
    for k in range(n - 1):
        if mat[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if mat[i][k] != 0), None)
            if swap is None:
                return 0
            mat[k], mat[swap] = mat[swap], mat[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                mat[i][j] = (mat[i][j] * mat[k][k] - mat[i][k] * mat[k][j]) // prev
        prev = mat[k][k]
    return sign * mat[n - 1][n - 1]


def uniform_tree_edge_marginals(g: Graph) -> np.ndarray:
    """Edge appearance probabilities of the uniform distribution over spanning trees.

    Each probability equals the effective resistance between the edge's
    endpoints with unit conductances, read off the inverse of the grounded
    Laplacian.
    """
    if not g.is_connected():
        raise NoSpanningTreeError(f"graph {g.name} is disconnected")
    if g.edge_count == 0:
        return np.zeros(0)
    n = g.node_count
    inv = np.zeros((n, n))
    inv[:-1, :-1] = np.linalg.inv(_reduced_laplacian(g))
    s = np.array([e[0] for e in g.edges])
    t = np.array([e[1] for e in g.edges])
    mu = inv[s, s] + inv[t, t] - 2.0 * inv[s, t]
    return np.clip(mu, 0.0, 1.0)
