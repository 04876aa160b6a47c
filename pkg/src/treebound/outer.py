"""Optimize edge appearance probabilities over the spanning tree polytope.

Conditional gradient ascent on ``H(mu) = min_T F(T; mu; theta)``. The gradient
of ``H`` is the vector of edge mutual informations at the inner minimizer, so
the linear oracle is a maximum weight spanning tree. Away steps (moving mass
off the worst atom of the current tree mixture) let atoms leave the support
exactly, which matters when the optimum lies on a face of the polytope.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .energy import Pseudomarginals, TreeMixture
from .errors import NoSpanningTreeError, SolverError
from .graphs import (
    Graph,
    SpanningTree,
    enumerate_spanning_trees,
    max_weight_spanning_tree,
    spanning_tree_count_exact,
    uniform_tree_edge_marginals,
)
from .inner import InnerOptions, InnerSolution, directional_curvature, minimize_free_energy
from .model import OvercompleteParams

log = logging.getLogger(__name__)

MU_FLOOR = 1e-9
# Uniform initial mixtures are expanded into explicit trees up to this many atoms.
EXPLICIT_TREE_LIMIT = 2000


@dataclass(frozen=True)
class OuterOptions:
    fw_gap_tolerance: float = 1e-6
    max_outer_iterations: int = 200
    sigma: float = 0.1
    beta: float = 0.5
    initial_step: float = 1.0
    curvature_step: bool = True
    min_step: float = 1e-8
    away_steps: bool = True
    pairwise: bool = False
    inner: InnerOptions = InnerOptions()

    def __post_init__(self):
        if self.fw_gap_tolerance <= 0:
            raise ValueError("fw_gap_tolerance must be positive")
        if not (0 < self.beta < 1 and 0 < self.sigma < 1):
            raise ValueError("Armijo parameters must lie in (0, 1)")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    bound: float
    fw_gap: float
    away_gap: float
    step: float
    kind: str
    tree: tuple[int, ...]
    mu: np.ndarray = field(repr=False)


@dataclass
class OuterSolution:
    mu: np.ndarray
    witness: TreeMixture
    bound: float
    fw_gap: float
    away_gap: float
    converged: bool
    inner: InnerSolution
    history: list[IterationRecord]
    initial_bound: float

    @property
    def iterations(self) -> int:
        return len(self.history)


def floor_edge_probabilities(mu: np.ndarray, floor: float = MU_FLOOR) -> np.ndarray:
    """Raise entries below ``floor`` to it, shrinking the others to keep the total."""
    mu = np.asarray(mu, dtype=float)
    low = mu < floor
    if not np.any(low):
        return mu
    out = mu.copy()
    deficit = float(np.sum(floor - mu[low]))
    out[low] = floor
    high = ~low
    if np.any(high):
        # Shrink the headroom above the floor proportionally.
        room = out[high] - floor
        out[high] -= deficit * room / room.sum()
    return out


def mwst_direction(mi: np.ndarray, g: Graph) -> SpanningTree:
    """Polytope vertex maximizing ``<mi, mu>``: a maximum weight spanning tree."""
    mi = np.asarray(mi, dtype=float)
    if not np.all(np.isfinite(mi)):
        raise ValueError("mutual information values must be finite")
    if np.any(mi < -1e-12):
        raise ValueError(f"mutual information below the numerical floor: {mi.min():.3e}")
    return max_weight_spanning_tree(g, np.maximum(mi, 0.0))


def armijo_step(
    evaluate: Callable[[np.ndarray], InnerSolution | None],
    mu: np.ndarray,
    direction: np.ndarray,
    value: float,
    slope: float,
    alpha_max: float = 1.0,
    sigma: float = 0.1,
    beta: float = 0.5,
    min_step: float = 1e-8,
    initial_step: float = 1.0,
) -> tuple[float, InnerSolution] | None:
    """Largest ``alpha`` in ``{a0, a0*beta, a0*beta**2, ...}`` with sufficient increase.

    ``a0 = min(initial_step, alpha_max)``. ``evaluate`` returns the inner
    solution at a trial point (or ``None`` if it failed there) and ``value`` is
    ``H(mu)``; ``H`` at the trial is ``-solution.bound``. Returns ``None`` when
    no step above ``min_step`` qualifies.
    """
    alpha = min(initial_step, alpha_max)
    while alpha >= min_step:
        sol = evaluate(mu + alpha * direction)
        if sol is not None and -sol.bound >= value + sigma * alpha * slope:
            return alpha, sol
        alpha *= beta
    return None


class _Mixture:
    """Mutable working copy of the tree-mixture witness."""

    def __init__(self, g: Graph):
        self.g = g
        self.keys: list = []
        self.vecs: list[np.ndarray] = []
        self.weights: list[float] = []
        self.base_marginals = None

    def add(self, key, vec, weight):
        if key in self.keys:
            self.weights[self.keys.index(key)] += weight
        else:
            self.keys.append(key)
            self.vecs.append(vec)
            self.weights.append(weight)

    def mu(self) -> np.ndarray:
        return np.sum([w * v for w, v in zip(self.weights, self.vecs)], axis=0)

    def toward(self, key, vec, alpha):
        self.weights = [(1.0 - alpha) * w for w in self.weights]
        self.add(key, vec, alpha)
        self._prune()

    def away(self, index, alpha, drop):
        self.weights = [(1.0 + alpha) * w for w in self.weights]
        self.weights[index] -= alpha
        if drop:
            self.weights[index] = 0.0
        self._prune()

    def transfer(self, index, key, vec, alpha, drop):
        self.weights[index] = 0.0 if drop else self.weights[index] - alpha
        self.add(key, vec, alpha)
        self._prune()

    def _prune(self):
        keep = [i for i, w in enumerate(self.weights) if w > 1e-15]
        self.keys = [self.keys[i] for i in keep]
        self.vecs = [self.vecs[i] for i in keep]
        total = sum(self.weights[i] for i in keep)
        self.weights = [self.weights[i] / total for i in keep]

    def freeze(self) -> TreeMixture:
        trees = tuple(k for k in self.keys if k != "uniform")
        weights = [w for k, w in zip(self.keys, self.weights) if k != "uniform"]
        base = sum(w for k, w in zip(self.keys, self.weights) if k == "uniform")
        # Absorb roundoff so the weights sum to one.
        total = sum(weights) + base
        weights = [w / total for w in weights]
        base /= total
        return TreeMixture(trees, np.asarray(weights), base, self.base_marginals if base else None)


def initial_mixture(g: Graph) -> _Mixture:
    """Uniform distribution over spanning trees, explicit when the count is small."""
    mix = _Mixture(g)
    mu0 = uniform_tree_edge_marginals(g)
    count = spanning_tree_count_exact(g) if g.node_count <= 60 else math.inf
    if count <= EXPLICIT_TREE_LIMIT and math.comb(g.edge_count, g.node_count - 1) <= 200_000:
        for tree in enumerate_spanning_trees(g):
            mix.add(tree, tree.indicator(g.edge_count), 1.0 / count)
    else:
        mix.base_marginals = mu0
        mix.add("uniform", mu0, 1.0)
    return mix


def optimize_edge_appearance(theta: OvercompleteParams, opts: OuterOptions = OuterOptions()) -> OuterSolution:
    """Jointly optimal tree-reweighted upper bound on the log partition function."""
    g = theta.graph
    if not g.is_connected():
        raise NoSpanningTreeError(f"graph {g.name} is disconnected")
    mix = initial_mixture(g)
    mu = mix.mu()
    state = {"T": None}

    def evaluate(mu_trial: np.ndarray) -> InnerSolution | None:
        mu_trial = floor_edge_probabilities(np.clip(mu_trial, 0.0, 1.0))
        sol = minimize_free_energy(theta, mu_trial, opts.inner, init=state["T"])
        return sol if sol.converged else None

    current = evaluate(mu)
    if current is None:
        raise SolverError("inner solver did not converge at the initial edge probabilities")
    initial_bound = current.bound
    history: list[IterationRecord] = []
    fw_gap = away_gap = math.inf
    converged = False
    for n in range(opts.max_outer_iterations + 1):
        state["T"] = current.T
        value = -current.bound
        mi = current.mutual_information
        tree = mwst_direction(mi, g)
        vertex = tree.indicator(g.edge_count)
        fw_gap = max(float(mi @ (vertex - mu)), 0.0)
        scores = [float(mi @ v) for v in mix.vecs]
        worst = int(np.argmin(scores))
        away_gap = max(float(mi @ mu) - scores[worst], 0.0) if opts.away_steps else 0.0
        if max(fw_gap, away_gap) <= opts.fw_gap_tolerance:
            converged = True
            break
        if n == opts.max_outer_iterations:
            break
        if opts.pairwise and opts.away_steps:
            kind, direction, gap = "pairwise", vertex - mix.vecs[worst], fw_gap + away_gap
            alpha_max = mix.weights[worst]
        elif fw_gap >= away_gap:
            kind, direction, gap, alpha_max = "fw", vertex - mu, fw_gap, 1.0
        else:
            w = mix.weights[worst]
            kind, direction, gap = "away", mu - mix.vecs[worst], away_gap
            alpha_max = w / (1.0 - w) if w < 1.0 else math.inf
        a0 = opts.initial_step
        if opts.curvature_step:
            curv = directional_curvature(theta, floor_edge_probabilities(mu), current, direction)
            if curv < 0:
                a0 = min(a0, gap / -curv)
        result = armijo_step(
            evaluate, mu, direction, value, gap, alpha_max,
            opts.sigma, opts.beta, opts.min_step, a0,
        )
        if result is None:
            converged = max(fw_gap, away_gap) <= 10 * opts.fw_gap_tolerance
            log.info("line search stalled at outer iteration %d (gap %.3e)", n, max(fw_gap, away_gap))
            break
        alpha, trial = result
        if kind == "fw":
            moved = tree.edges
            mix.toward(tree, vertex, alpha)
        elif kind == "pairwise":
            moved = tree.edges
            mix.transfer(worst, tree, vertex, alpha, drop=alpha >= alpha_max)
        else:
            key = mix.keys[worst]
            moved = key.edges if isinstance(key, SpanningTree) else ()
            mix.away(worst, alpha, drop=alpha >= alpha_max)
        mu = mix.mu()
        current = trial
        history.append(IterationRecord(n, current.bound, fw_gap, away_gap, alpha, kind, moved, mu.copy()))
    return OuterSolution(
        mu=mu,
        witness=mix.freeze(),
        bound=current.bound,
        fw_gap=fw_gap,
        away_gap=away_gap,
        converged=converged,
        inner=current,
        history=history,
        initial_bound=initial_bound,
    )


def unoptimized_bound(theta: OvercompleteParams, mu, opts: InnerOptions = InnerOptions()) -> InnerSolution:
    return minimize_free_energy(theta, mu, opts)


def uniform_count_probabilities(g: Graph) -> np.ndarray:
    """``(N - 1) / |E|`` on every edge."""
    return np.full(g.edge_count, (g.node_count - 1) / g.edge_count)
