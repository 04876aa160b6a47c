"""Pseudomarginals, the tree-reweighted free energy, and tree-mixture bounds.

The free energy of pseudomarginals ``T`` under edge weights ``mu`` is::

    F(T; mu; theta) = -sum_s H(T_s) + sum_e mu_e I(T_e) - <T, theta>

Mutual information of an edge table is always taken against that table's own
row and column sums, which makes ``F`` well defined on the ambient space; on
the local consistency polytope those sums are the node tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    BoundaryError,
    InadmissibleCombinationError,
    InvalidPseudomarginalError,
    InvalidTableError,
    ShapeMismatchError,
)
from .graphs import Graph, SpanningTree, is_spanning_tree
from .model import OvercompleteParams, _check_config

VALIDATION_TOL = 1e-6


@dataclass(frozen=True)
class Pseudomarginals:
    graph: Graph
    node: np.ndarray
    edge: np.ndarray

    def __post_init__(self):
        node = np.asarray(self.node, dtype=float)
        edge = np.asarray(self.edge, dtype=float)
        n, ne = self.graph.node_count, self.graph.edge_count
        if node.ndim != 2 or node.shape[0] != n:
            raise ShapeMismatchError(f"node tables have shape {node.shape}, expected ({n}, m)")
        m = node.shape[1]
        if ne == 0 and edge.size == 0:
            edge = edge.reshape(0, m, m)
        if edge.shape != (ne, m, m):
            raise ShapeMismatchError(f"edge tables have shape {edge.shape}, expected {(ne, m, m)}")
        object.__setattr__(self, "node", node)
        object.__setattr__(self, "edge", edge)

    @property
    def m(self) -> int:
        return self.node.shape[1]

    @classmethod
    def uniform(cls, graph: Graph, m: int) -> "Pseudomarginals":
        return cls(
            graph,
            np.full((graph.node_count, m), 1.0 / m),
            np.full((graph.edge_count, m, m), 1.0 / m**2),
        )

    @classmethod
    def from_flat(cls, graph: Graph, m: int, vec: np.ndarray) -> "Pseudomarginals":
        k = graph.node_count * m
        return cls(graph, vec[:k].reshape(-1, m), vec[k:].reshape(-1, m, m))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.node.ravel(), self.edge.ravel()])

    def to_dict(self) -> dict:
        return {"node_marginals": self.node.tolist(), "edge_marginals": self.edge.tolist()}


@dataclass(frozen=True)
class ConsistencyReport:
    passed: bool
    violation: float
    worst: str


def validate_local_consistency(T: Pseudomarginals, tol: float = VALIDATION_TOL) -> ConsistencyReport:
    """Check nonnegativity, normalization and edge-to-node marginalization."""
    checks = {"nonnegativity": 0.0, "normalization": 0.0, "marginalization": 0.0}
    if T.node.size:
        checks["nonnegativity"] = max(0.0, -float(T.node.min()))
        checks["normalization"] = float(np.max(np.abs(T.node.sum(axis=1) - 1.0)))
    if T.edge.size:
        checks["nonnegativity"] = max(checks["nonnegativity"], -float(T.edge.min()))
        s = [e[0] for e in T.graph.edges]
        t = [e[1] for e in T.graph.edges]
        rows = np.abs(T.edge.sum(axis=2) - T.node[s]).max()
        cols = np.abs(T.edge.sum(axis=1) - T.node[t]).max()
        checks["marginalization"] = float(max(rows, cols))
    worst = max(checks, key=checks.get)
    return ConsistencyReport(checks[worst] <= tol, checks[worst], worst)


def _xlogx(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def node_entropy(table: np.ndarray) -> float:
    table = np.asarray(table, dtype=float)
    if np.any(table < 0):
        raise InvalidTableError("probability table has negative entries")
    return float(-_xlogx(table).sum())


def edge_mutual_information(table: np.ndarray) -> float:
    table = np.asarray(table, dtype=float)
    if np.any(table < 0):
        raise InvalidTableError("probability table has negative entries")
    return float(_xlogx(table).sum() - _xlogx(table.sum(axis=1)).sum() - _xlogx(table.sum(axis=0)).sum())


def edge_mutual_informations(T: Pseudomarginals) -> np.ndarray:
    """Mutual information of every edge table, in graph edge order."""
    if T.edge.size == 0:
        return np.zeros(0)
    if np.any(T.edge < 0):
        raise InvalidTableError("probability table has negative entries")
    joint = _xlogx(T.edge).sum(axis=(1, 2))
    return joint - _xlogx(T.edge.sum(axis=2)).sum(axis=1) - _xlogx(T.edge.sum(axis=1)).sum(axis=1)


def average_energy(T: Pseudomarginals, theta: OvercompleteParams) -> float:
    return float(np.sum(T.node * theta.theta_node) + np.sum(T.edge * theta.theta_edge))


def _check_mu(mu, graph: Graph) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 0:
        mu = np.full(graph.edge_count, float(mu))
    if mu.shape != (graph.edge_count,):
        raise ShapeMismatchError(f"expected {graph.edge_count} edge weights, got shape {mu.shape}")
    if np.any(mu < 0) or np.any(mu > 1):
        raise ValueError("edge appearance probabilities must lie in [0, 1]")
    return mu


def free_energy(
    T: Pseudomarginals,
    mu,
    theta: OvercompleteParams,
    validate: bool = True,
    tol: float = VALIDATION_TOL,
) -> float:
    """Tree-reweighted free energy; its negative at the minimizer bounds the log partition."""
    mu = _check_mu(mu, T.graph)
    if validate:
        report = validate_local_consistency(T, tol)
        if not report.passed:
            raise InvalidPseudomarginalError(
                f"pseudomarginals violate {report.worst} by {report.violation:.3e}"
            )
    neg_entropy = float(_xlogx(T.node).sum())
    return neg_entropy + float(mu @ edge_mutual_informations(T)) - average_energy(T, theta)


def free_energy_gradient(T: Pseudomarginals, mu, theta: OvercompleteParams) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of ``free_energy`` with respect to every table entry."""
    mu = _check_mu(mu, T.graph)
    if np.any(T.node <= 0) or np.any(T.edge <= 0):
        raise BoundaryError("gradient is undefined at a zero table entry")
    grad_node = np.log(T.node) + 1.0 - theta.theta_node
    rows = T.edge.sum(axis=2)
    cols = T.edge.sum(axis=1)
    mi_grad = np.log(T.edge) - np.log(rows)[:, :, None] - np.log(cols)[:, None, :] - 1.0
    grad_edge = mu[:, None, None] * mi_grad - theta.theta_edge
    return grad_node, grad_edge


def consistency_constraints(graph: Graph, m: int) -> tuple[sp.csr_matrix, np.ndarray]:
    """Full-row-rank equality constraints ``A @ T.flat() == b`` describing the polytope.

    Rows: one normalization per node, ``m`` row-sum constraints per edge and
    ``m - 1`` column-sum constraints per edge (the last is implied).
    """
    n, ne = graph.node_count, graph.edge_count
    offset = n * m
    rows, cols, vals = [], [], []
    b = []
    r = 0
    for s in range(n):
        for j in range(m):
            rows.append(r)
            cols.append(s * m + j)
            vals.append(1.0)
        b.append(1.0)
        r += 1
    for e, (s, t) in enumerate(graph.edges):
        base = offset + e * m * m
        for j in range(m):
            for k in range(m):
                rows.append(r)
                cols.append(base + j * m + k)
                vals.append(1.0)
            rows.append(r)
            cols.append(s * m + j)
            vals.append(-1.0)
            b.append(0.0)
            r += 1
        for k in range(m - 1):
            for j in range(m):
                rows.append(r)
                cols.append(base + j * m + k)
                vals.append(1.0)
            rows.append(r)
            cols.append(t * m + k)
            vals.append(-1.0)
            b.append(0.0)
            r += 1
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, offset + ne * m * m))
    return A, np.asarray(b)


def project_to_tangent(vec: np.ndarray, A: sp.spmatrix) -> np.ndarray:
    """Orthogonal projection of ``vec`` onto the null space of ``A``."""
    AAt = (A @ A.T).tocsc()
    nu = spla.spsolve(AAt, A @ vec)
    return vec - A.T @ np.atleast_1d(nu)


# ---------------------------------------------------------------------------
# Trees and tree mixtures


@dataclass(frozen=True)
class TreeView:
    """Node tables plus the edge tables of one spanning tree."""

    graph: Graph
    tree: SpanningTree
    node: np.ndarray
    edge: dict[int, np.ndarray]


def tree_project(T: Pseudomarginals, tree: SpanningTree) -> TreeView:
    if not is_spanning_tree(T.graph, tree.edges):
        raise ValueError("edge set is not a spanning tree of the graph")
    return TreeView(T.graph, tree, T.node, {e: T.edge[e] for e in tree.edges})


def tree_distribution_eval(view: TreeView, x: Sequence[int]) -> float:
    """Junction-tree factorization of the projected tables at configuration ``x``.

    A zero numerator anywhere makes the whole product zero.
    """
    x = _check_config(x, view.graph.node_count, view.node.shape[1])
    value = 1.0
    for s in range(view.graph.node_count):
        value *= view.node[s, x[s]]
    for e, table in view.edge.items():
        s, t = view.graph.edges[e]
        num = table[x[s], x[t]]
        if num == 0.0 or value == 0.0:
            return 0.0
        value *= num / (view.node[s, x[s]] * view.node[t, x[t]])
    return float(value)


def tree_negative_entropy(view: TreeView) -> float:
    """Negative entropy of the tree distribution via its node/edge decomposition."""
    total = float(_xlogx(view.node).sum())
    for table in view.edge.values():
        total += edge_mutual_information(table)
    return total


@dataclass(frozen=True)
class TreeMixture:
    """Distribution over spanning trees used as a membership certificate.

    Besides explicit tree atoms, a mixture may hold ``base_weight`` of the
    uniform distribution over all spanning trees, whose edge marginals are
    stored in ``base_marginals``.
    """

    trees: tuple[SpanningTree, ...]
    weights: np.ndarray
    base_weight: float = 0.0
    base_marginals: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.trees) != w.size:
            raise ShapeMismatchError("one weight per tree is required")
        if np.any(w <= 0) or self.base_weight < 0:
            raise ValueError("mixture weights must be positive")
        if self.base_weight > 0 and self.base_marginals is None:
            raise ValueError("a base component needs its edge marginals")
        total = w.sum() + self.base_weight
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {total!r}, not 1")
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "weights", w)

    def edge_marginals(self, edge_count: int) -> np.ndarray:
        mu = np.zeros(edge_count)
        for tree, w in zip(self.trees, self.weights):
            mu[list(tree.edges)] += w
        if self.base_weight > 0:
            mu += self.base_weight * np.asarray(self.base_marginals)
        return mu

    @classmethod
    def uniform_over(cls, trees: Sequence[SpanningTree]) -> "TreeMixture":
        trees = tuple(trees)
        return cls(trees, np.full(len(trees), 1.0 / len(trees)))


@dataclass(frozen=True)
class TreeParams:
    """Parameters supported on a spanning tree; off-tree edge tables are zero."""

    tree: SpanningTree
    params: OvercompleteParams

    def __post_init__(self):
        off = [e for e in range(self.params.graph.edge_count) if e not in self.tree.edges]
        if off and np.any(self.params.theta_edge[off] != 0.0):
            raise ValueError("tree parameters must vanish on edges outside the tree")


def tree_elimination_order(graph: Graph, tree: SpanningTree) -> list[int]:
    """Leaves-first node order for a spanning tree (reverse breadth-first)."""
    adj = [[] for _ in range(graph.node_count)]
    for e in tree.edges:
        s, t = graph.edges[e]
        adj[s].append(t)
        adj[t].append(s)
    seen = [False] * graph.node_count
    order = []
    for root in range(graph.node_count):
        if seen[root]:
            continue
        seen[root] = True
        queue = [root]
        while queue:
            v = queue.pop(0)
            order.append(v)
            for u in adj[v]:
                if not seen[u]:
                    seen[u] = True
                    queue.append(u)
    return order[::-1]


def tree_log_partition(tp: TreeParams) -> float:
    """Exact log partition of a tree-structured parameter vector."""
    from .exact import variable_elimination_log_partition

    g = tp.params.graph
    edges = tuple(g.edges[e] for e in tp.tree.edges)
    sub = OvercompleteParams(
        Graph(g.node_count, edges, name=f"{g.name}-tree"),
        tp.params.m,
        tp.params.theta_node,
        tp.params.theta_edge[list(tp.tree.edges)],
    )
    return variable_elimination_log_partition(sub, tree_elimination_order(g, tp.tree))


def admissibility_gap(mixture: TreeMixture, tree_params: Sequence[TreeParams], theta: OvercompleteParams) -> float:
    """Largest entrywise gap between the mixture average of tree parameters and ``theta``."""
    if mixture.base_weight > 0:
        raise ValueError("admissibility needs an explicit mixture of trees")
    if len(tree_params) != len(mixture.trees):
        raise ShapeMismatchError("one TreeParams per mixture atom is required")
    avg = np.zeros_like(theta.flat())
    for tree, w, tp in zip(mixture.trees, mixture.weights, tree_params):
        if tp.tree != tree:
            raise ValueError("tree parameters are not aligned with the mixture atoms")
        avg += w * tp.params.flat()
    return float(np.max(np.abs(avg - theta.flat()))) if avg.size else 0.0


def mixture_distribution_gap(
    mixture: TreeMixture, tree_params: Sequence[TreeParams], theta: OvercompleteParams
) -> float:
    """Distribution-level diagnostic: pointwise gap between ``p(x; avg)`` and ``p(x; theta)``.

    Zero whenever the average differs from ``theta`` only along directions the
    overcomplete representation cannot see. Small models only.
    """
    from .exact import distribution_gap

    avg = sum(w * tp.params.flat() for w, tp in zip(mixture.weights, tree_params))
    k = theta.theta_node.size
    combined = theta.replace(avg[:k].reshape(theta.theta_node.shape), avg[k:].reshape(theta.theta_edge.shape))
    return distribution_gap(combined, theta)


def jensen_bound(
    mixture: TreeMixture,
    tree_params: Sequence[TreeParams],
    theta: OvercompleteParams,
    tol: float = 1e-8,
) -> float:
    """``sum_T mu(T) * logZ(theta(T))`` for an admissible combination."""
    gap = admissibility_gap(mixture, tree_params, theta)
    if gap > tol:
        raise InadmissibleCombinationError(gap)
    covered = mixture.edge_marginals(theta.graph.edge_count)
    if np.any(covered <= 0):
        raise InadmissibleCombinationError(0.0, "some edge appears in no support tree")
    return float(sum(w * tree_log_partition(tp) for w, tp in zip(mixture.weights, tree_params)))
