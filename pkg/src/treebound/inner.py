"""Minimize the tree-reweighted free energy over the local consistency polytope.

Newton steps are taken on the full vector of table entries with the
marginalization and normalization constraints imposed through a sparse KKT
system. Each step is solved for the relative change ``dx / x`` and applied
to the logs of the entries, followed by an entropic projection back onto the
constraints; entries far below 1e-300 keep full relative precision. The
entropy terms have infinite slope at zero, so the minimizer is interior
and no barrier term is needed.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import Pseudomarginals, TreeParams, consistency_constraints, edge_mutual_informations, free_energy
from .errors import BoundaryError, NoSpanningTreeError, StrictPositivityError
from .graphs import Graph, SpanningTree
from .model import OvercompleteParams


@dataclass(frozen=True)
class InnerOptions:
    kkt_tolerance: float = 1e-8
    max_iterations: int = 500
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    feasibility_tolerance: float = 1e-14
    restore_iterations: int = 30
    init: str = "uniform"

    def __post_init__(self):
        if self.kkt_tolerance <= 0:
            raise ValueError("kkt_tolerance must be positive")
        if self.init not in ("uniform", "random"):
            raise ValueError(f"unknown init mode {self.init!r}")


@dataclass
class InnerSolution:
    T: Pseudomarginals
    bound: float
    kkt_residual: float
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def mutual_information(self) -> np.ndarray:
        return edge_mutual_informations(self.T)


@functools.lru_cache(maxsize=64)
def _constraints(graph: Graph, m: int):
    """Constraint matrix, right-hand side and a factor of ``A A^T``."""
    A, b = consistency_constraints(graph, m)
    A = A.tocsc()
    gram = spla.splu((A @ A.T).tocsc())
    return A, b, gram


@functools.lru_cache(maxsize=64)
def _kkt_pattern(graph: Graph, m: int):
    """Fixed CSC structure of the KKT matrix and the permutation that fills it."""
    A = _constraints(graph, m)[0].tocoo()
    n, k = A.shape[1], A.shape[0]
    diag = np.arange(n)
    rows = np.concatenate([diag, A.col, n + A.row])
    cols = np.concatenate([diag, n + A.row, A.col])
    order = np.lexsort((rows, cols))
    indptr = np.searchsorted(cols[order], np.arange(n + k + 1))
    return A.data, A.col, rows[order], indptr, order, n + k


def _term_weights(graph: Graph, m: int, mu: np.ndarray) -> np.ndarray:
    """Per-entry entropy weights: ``1 - sum of incident mu`` on nodes, ``mu_e`` on edges."""
    incident = np.zeros(graph.node_count)
    for e, (s, t) in enumerate(graph.edges):
        incident[s] += mu[e]
        incident[t] += mu[e]
    return np.concatenate([np.repeat(1.0 - incident, m), np.repeat(mu, m * m)])


def projected_gradient_norm(graph: Graph, m: int, grad_x: np.ndarray) -> float:
    """Infinity norm of the orthogonal projection of ``grad_x`` onto the polytope's tangent space."""
    A, _, gram = _constraints(graph, m)
    if grad_x.size == 0:
        return 0.0
    nu = gram.solve(A @ grad_x)
    return float(np.max(np.abs(grad_x - A.T @ nu)))


def _kkt_solve(graph: Graph, m: int, x: np.ndarray, weights: np.ndarray, rhs_x: np.ndarray, rhs_c: np.ndarray):
    """Relative Newton step ``r`` with ``dx = x * r``; ``None`` if the system is singular.

    Solves ``[[diag(weights), A^T], [A diag(x), 0]] [r; nu] = [rhs_x; rhs_c]``,
    which is the KKT system with Hessian ``diag(weights / x)`` after the change
    of variables. Tiny entries keep full relative precision this way.
    """
    a_data, a_col, indices, indptr, order, size = _kkt_pattern(graph, m)
    data = np.concatenate([weights, a_data, a_data * x[a_col]])[order]
    K = sp.csc_matrix((data, indices, indptr), shape=(size, size))
    try:
        sol = spla.splu(K).solve(np.concatenate([rhs_x, rhs_c]))
    except RuntimeError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    return sol[: rhs_x.size]


def _advance(u: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Log entries after the relative change ``t``: linear growth, exponential shrinkage.

    Matches ``x * (1 + t)`` to second order and never leaves the positive orthant.
    """
    return u + np.where(t >= 0, np.log1p(np.maximum(t, 0.0)), t)


def _restore(graph: Graph, m: int, u: np.ndarray, opts: InnerOptions):
    """Entropic projection of ``exp(u)`` back onto ``A x = b``; ``None`` if it fails."""
    A, b, _ = _constraints(graph, m)
    ones = np.ones_like(u)
    zeros = np.zeros_like(u)
    for _ in range(opts.restore_iterations + 1):
        x = np.exp(u)
        gap = b - A @ x
        if np.max(np.abs(gap)) <= opts.feasibility_tolerance:
            return u, x
        r = _kkt_solve(graph, m, x, ones, zeros, gap)
        if r is None:
            return None
        u = _advance(u, r)
    return None


def minimize_free_energy(
    theta: OvercompleteParams,
    mu,
    opts: InnerOptions = InnerOptions(),
    init: Pseudomarginals | None = None,
    rng: np.random.Generator | None = None,
) -> InnerSolution:
    """Damped equality-constrained Newton on the free energy over the local polytope.

    ``init`` overrides ``opts.init`` and must be strictly positive and locally
    consistent (e.g. a previous solution, for warm starts).
    """
    g = theta.graph
    m = theta.m
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 0:
        mu = np.full(g.edge_count, float(mu))
    if mu.shape != (g.edge_count,):
        raise ValueError(f"expected {g.edge_count} edge weights, got shape {mu.shape}")
    if np.any(mu <= 0) or np.any(mu > 1):
        raise StrictPositivityError("edge appearance probabilities must lie in (0, 1]")
    if not g.is_connected():
        raise NoSpanningTreeError(f"graph {g.name} is disconnected")

    A, b, _ = _constraints(g, m)
    if init is None:
        init = Pseudomarginals.uniform(g, m) if opts.init == "uniform" else random_interior_point(g, m, rng)
    x = init.flat().copy()
    if np.any(x <= 0):
        raise BoundaryError("initial pseudomarginals must be strictly positive")
    # Entries are carried as logs: minimizers for small mu_e can sit below the
    # smallest double, while their logs stay well scaled.
    u = np.log(x)

    w = _term_weights(g, m, mu)
    theta_x = theta.flat()

    def objective(uv, xv):
        return float(w @ (xv * uv) - theta_x @ xv)

    f = objective(u, x)
    history = [f]
    residual = np.inf
    converged = False
    iterations = 0
    for iterations in range(opts.max_iterations + 1):
        grad = w * (u + 1.0) - theta_x
        residual = projected_gradient_norm(g, m, grad)
        if residual <= opts.kkt_tolerance:
            converged = True
            break
        if iterations == opts.max_iterations:
            break
        # Newton step for the relative change r = dx / x.
        r = _kkt_solve(g, m, x, w, -grad, b - A @ x)
        slope = float(grad @ (x * r)) if r is not None else np.inf
        # Near the optimum the predicted decrease is below roundoff in f.
        noise = 1e-12 * max(1.0, abs(f))
        if r is None or slope > noise:
            # Reduced Hessian not positive definite here: entropic steepest descent.
            r = _kkt_solve(g, m, x, np.ones_like(w), -grad, np.zeros(b.size))
            if r is None:
                break
            slope = float(grad @ (x * r))
            if not slope < 0:
                break
        tiny = -slope < noise
        step = 1.0
        while True:
            trial = _restore(g, m, _advance(u, step * r), opts)
            if trial is not None:
                f_new = objective(*trial)
                if tiny or f_new <= f + opts.armijo_c * step * slope:
                    break
            step *= opts.backtrack
            if step < 1e-16:
                break
        if step < 1e-16:
            break
        (u, x), f = trial, f_new
        history.append(f)

    # Entries below the smallest normal double are stored at that floor.
    T = Pseudomarginals.from_flat(g, m, np.maximum(x, np.finfo(float).tiny))
    return InnerSolution(
        T=T,
        bound=-free_energy(T, mu, theta),
        kkt_residual=float(residual),
        iterations=iterations,
        converged=converged,
        history=history,
    )


def directional_curvature(theta: OvercompleteParams, mu, sol: InnerSolution, direction) -> float:
    """Second derivative of ``min_T F(T; mu + a*direction)`` in ``a`` at ``a = 0``.

    Obtained by differentiating the stationarity conditions of the inner
    problem at its minimizer; always ``<= 0``.
    """
    g, m = theta.graph, theta.m
    x = sol.T.flat()
    w = _term_weights(g, m, np.asarray(mu, dtype=float))
    wd = _term_weights(g, m, np.asarray(direction, dtype=float))
    wd[: g.node_count * m] -= 1.0
    q = wd * (np.log(x) + 1.0)
    r = _kkt_solve(g, m, x, w, -q, np.zeros(_constraints(g, m)[1].size))
    if r is None:
        return 0.0
    return float(q @ (x * r))


def random_interior_point(graph: Graph, m: int, rng: np.random.Generator | None = None) -> Pseudomarginals:
    """Strictly positive locally consistent tables.

    Mixes a random joint-product construction with the uniform point: node
    tables are random Dirichlet draws and each edge table is the product of
    its node tables, perturbed along a zero-row/zero-column-sum direction.
    """
    rng = np.random.default_rng() if rng is None else rng
    node = rng.dirichlet(np.ones(m), size=graph.node_count)
    node = 0.5 * node + 0.5 / m
    edge = np.zeros((graph.edge_count, m, m))
    for e, (s, t) in enumerate(graph.edges):
        prod = np.outer(node[s], node[t])
        d = rng.standard_normal((m, m))
        d -= d.mean(axis=1, keepdims=True)
        d -= d.mean(axis=0, keepdims=True)
        neg = d < 0
        scale = 0.9 * np.min(prod[neg] / -d[neg]) if np.any(neg) else 0.0
        edge[e] = prod + rng.uniform(0, 1) * scale * d
    return Pseudomarginals(graph, node, edge)


def recover_tree_params(T: Pseudomarginals, tree: SpanningTree) -> TreeParams:
    """Exponential parameters of the tree factorization of ``T``, normalized so logZ = 0."""
    if np.any(T.node <= 0) or np.any(T.edge[list(tree.edges)] <= 0):
        raise BoundaryError("tree parameters need strictly positive pseudomarginals")
    g = T.graph
    theta_node = np.log(T.node)
    theta_edge = np.zeros_like(T.edge)
    for e in tree.edges:
        s, t = g.edges[e]
        theta_edge[e] = np.log(T.edge[e]) - np.log(T.node[s])[:, None] - np.log(T.node[t])[None, :]
    return TreeParams(tree, OvercompleteParams(g, T.m, theta_node, theta_edge))
