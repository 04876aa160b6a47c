"""Exact log partition functions and marginals for small or thin models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ProblemTooLargeError
from .model import OvercompleteParams

DEFAULT_CAP = 2**24


@dataclass(frozen=True)
class ExactResult:
    log_partition: float
    node_marginals: np.ndarray | None = None
    edge_marginals: np.ndarray | None = None


def score_tensor(p: OvercompleteParams, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Unnormalized log-score of every configuration, shape ``(m,) * N``."""
    n, m = p.graph.node_count, p.m
    if m**n > cap:
        raise ProblemTooLargeError(f"brute force needs {m}^{n} configurations", cap)
    scores = np.zeros((m,) * n)
    for s in range(n):
        shape = [1] * n
        shape[s] = m
        scores = scores + p.theta_node[s].reshape(shape)
    for e, (s, t) in enumerate(p.graph.edges):
        shape = [1] * n
        shape[s] = m
        shape[t] = m
        table = p.theta_edge[e] if s < t else p.theta_edge[e].T
        scores = scores + table.reshape(shape)
    return scores


def brute_force_log_partition(
    p: OvercompleteParams, cap: int = DEFAULT_CAP, marginals: bool = True
) -> ExactResult:
    """Sum over all ``m**N`` configurations in the log domain."""
    scores = score_tensor(p, cap)
    phi = float(logsumexp(scores))
    if not marginals:
        return ExactResult(phi)
    prob = np.exp(scores - phi)
    n = p.graph.node_count
    axes = tuple(range(n))
    node = np.stack([prob.sum(axis=axes[:s] + axes[s + 1 :]) for s in range(n)])
    edge = np.zeros((p.graph.edge_count, p.m, p.m))
    for e, (s, t) in enumerate(p.graph.edges):
        pair = prob.sum(axis=tuple(a for a in axes if a not in (s, t)))
        edge[e] = pair if s < t else pair.T
    return ExactResult(phi, node, edge)


def log_probabilities(p: OvercompleteParams, cap: int = DEFAULT_CAP) -> np.ndarray:
    scores = score_tensor(p, cap)
    return scores - logsumexp(scores)


def _align(table: np.ndarray, scope: tuple[int, ...], target: tuple[int, ...]) -> np.ndarray:
    """Broadcast a factor over ``scope`` into the axis layout of ``target``."""
    perm = sorted(range(len(scope)), key=lambda i: target.index(scope[i]))
    table = np.transpose(table, perm)
    shape = [1] * len(target)
    for i in perm:
        shape[target.index(scope[i])] = table.shape[perm.index(i)]
    return table.reshape(shape)


def variable_elimination_log_partition(
    p: OvercompleteParams, order: Sequence[int] | None = None, cap: int = DEFAULT_CAP
) -> float:
    """Sum-product variable elimination in the log domain.

    ``order`` defaults to ``0, 1, ..., N-1`` (row-major for grids). Raises
    ``ProblemTooLargeError`` before building any intermediate table with more
    than ``cap`` entries.
    """
    n, m = p.graph.node_count, p.m
    order = list(range(n)) if order is None else [int(v) for v in order]
    if sorted(order) != list(range(n)):
        raise ValueError("elimination order must be a permutation of the nodes")

    factors: list[tuple[tuple[int, ...], np.ndarray]] = []
    for s in range(n):
        factors.append(((s,), np.asarray(p.theta_node[s], dtype=float)))
    for e, (s, t) in enumerate(p.graph.edges):
        factors.append(((s, t), np.asarray(p.theta_edge[e], dtype=float)))

    total = 0.0
    for v in order:
        touching = [f for f in factors if v in f[0]]
        factors = [f for f in factors if v not in f[0]]
        scope = tuple(sorted({u for f in touching for u in f[0]}))
        if m ** len(scope) > cap:
            raise ProblemTooLargeError(
                f"eliminating node {v} builds a table over {len(scope)} variables", cap
            )
        combined = np.zeros((1,) * len(scope))
        for fscope, table in touching:
            combined = combined + _align(table, fscope, scope)
        combined = np.broadcast_to(combined, (m,) * len(scope))
        reduced = logsumexp(combined, axis=scope.index(v))
        rest = tuple(u for u in scope if u != v)
        if rest:
            factors.append((rest, np.asarray(reduced)))
        else:
            total += float(reduced)
    return total


def moment_check(p: OvercompleteParams, alpha: tuple, h: float = 1e-4) -> tuple[float, float]:
    """Central difference of the log partition in coordinate ``alpha`` and the exact mean.

    ``alpha`` is ``("node", s, j)`` or ``("edge", e, j, k)``.
    """
    up = brute_force_log_partition(p.bumped(alpha, h), marginals=False).log_partition
    down = brute_force_log_partition(p.bumped(alpha, -h), marginals=False).log_partition
    exact = brute_force_log_partition(p)
    if alpha[0] == "node":
        moment = exact.node_marginals[alpha[1], alpha[2]]
    else:
        moment = exact.edge_marginals[alpha[1], alpha[2], alpha[3]]
    return (up - down) / (2.0 * h), float(moment)


def distribution_gap(a: OvercompleteParams, b: OvercompleteParams, cap: int = DEFAULT_CAP) -> float:
    """Largest pointwise gap between the normalized distributions of two models.

    Parameter vectors that differ only along directions that are constant on
    every configuration give a gap of zero.
    """
    return float(np.max(np.abs(np.exp(log_probabilities(a, cap)) - np.exp(log_probabilities(b, cap)))))


def elimination_width(graph, order: Sequence[int] | None = None) -> int:
    """Largest clique size (variables in one table) created by eliminating in ``order``."""
    n = graph.node_count
    order = list(range(n)) if order is None else list(order)
    adj = [set() for _ in range(n)]
    for s, t in graph.edges:
        adj[s].add(t)
        adj[t].add(s)
    width = 1 if n else 0
    for v in order:
        nbrs = adj[v]
        width = max(width, len(nbrs) + 1)
        for a in nbrs:
            adj[a] |= nbrs - {a}
            adj[a].discard(v)
        adj[v] = set()
    return width
