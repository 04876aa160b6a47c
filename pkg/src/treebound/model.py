"""Pairwise discrete MRFs in minimal (Ising) and overcomplete (indicator) form.

Overcomplete parameters hold one table per node, ``theta_node[s, j]`` for the
potential ``[x_s == j]``, and one per edge, ``theta_edge[e, j, k]`` for
``[x_s == j and x_t == k]`` where ``(s, t) = graph.edges[e]``.

Spin variables are stored as state indices: index 0 is -1 and index 1 is +1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import InvalidConfigurationError, ModelFormatError, ShapeMismatchError
from .graphs import Graph

Coding = Literal["zero_one", "spin"]

# Pinned generator for every random draw in the package.
BIT_GENERATOR = np.random.PCG64


def make_rng(seed: int, *spawn_key: int) -> np.random.Generator:
    """PCG64 generator seeded from ``SeedSequence(seed, spawn_key=spawn_key)``."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in spawn_key))
    return np.random.Generator(BIT_GENERATOR(seq))


@dataclass(frozen=True)
class MinimalIsingParams:
    graph: Graph
    node_params: np.ndarray
    edge_params: np.ndarray
    coding: Coding = "zero_one"

    def __post_init__(self):
        node = np.asarray(self.node_params, dtype=float).reshape(-1)
        edge = np.asarray(self.edge_params, dtype=float).reshape(-1)
        if node.shape != (self.graph.node_count,):
            raise ShapeMismatchError(f"expected {self.graph.node_count} node params, got {node.size}")
        if edge.shape != (self.graph.edge_count,):
            raise ShapeMismatchError(f"expected {self.graph.edge_count} edge params, got {edge.size}")
        if not (np.all(np.isfinite(node)) and np.all(np.isfinite(edge))):
            raise ValueError("parameters must be finite")
        if self.coding not in ("zero_one", "spin"):
            raise ValueError(f"unknown variable coding {self.coding!r}")
        object.__setattr__(self, "node_params", node)
        object.__setattr__(self, "edge_params", edge)

    def values(self, x: Sequence[int]) -> np.ndarray:
        """Map state indices to variable values under this coding."""
        x = _check_config(x, self.graph.node_count, 2)
        return x.astype(float) if self.coding == "zero_one" else 2.0 * x - 1.0

    def log_score(self, x: Sequence[int]) -> float:
        v = self.values(x)
        s = np.array([e[0] for e in self.graph.edges], dtype=int)
        t = np.array([e[1] for e in self.graph.edges], dtype=int)
        pair = v[s] * v[t] if self.graph.edge_count else np.zeros(0)
        return float(self.node_params @ v + self.edge_params @ pair)


@dataclass(frozen=True)
class OvercompleteParams:
    graph: Graph
    m: int
    theta_node: np.ndarray
    theta_edge: np.ndarray

    def __post_init__(self):
        node = np.array(self.theta_node, dtype=float)
        edge = np.array(self.theta_edge, dtype=float)
        n, ne, m = self.graph.node_count, self.graph.edge_count, self.m
        if m < 1:
            raise ValueError("state count m must be >= 1")
        if node.shape != (n, m):
            raise ShapeMismatchError(f"theta_node has shape {node.shape}, expected {(n, m)}")
        if ne == 0 and edge.size == 0:
            edge = edge.reshape(0, m, m)
        if edge.shape != (ne, m, m):
            raise ShapeMismatchError(f"theta_edge has shape {edge.shape}, expected {(ne, m, m)}")
        if not (np.all(np.isfinite(node)) and np.all(np.isfinite(edge))):
            raise ValueError("parameters must be finite")
        node.flags.writeable = False
        edge.flags.writeable = False
        object.__setattr__(self, "theta_node", node)
        object.__setattr__(self, "theta_edge", edge)

    @classmethod
    def zeros(cls, graph: Graph, m: int = 2) -> "OvercompleteParams":
        return cls(graph, m, np.zeros((graph.node_count, m)), np.zeros((graph.edge_count, m, m)))

    def replace(self, theta_node=None, theta_edge=None, graph=None) -> "OvercompleteParams":
        return OvercompleteParams(
            self.graph if graph is None else graph,
            self.m,
            self.theta_node if theta_node is None else theta_node,
            self.theta_edge if theta_edge is None else theta_edge,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta_node.ravel(), self.theta_edge.ravel()])

    def log_score(self, x: Sequence[int]) -> float:
        x = _check_config(x, self.graph.node_count, self.m)
        total = self.theta_node[np.arange(self.graph.node_count), x].sum()
        for e, (s, t) in enumerate(self.graph.edges):
            total += self.theta_edge[e, x[s], x[t]]
        return float(total)

    # Shorthand for the index keys used by ``exact.moment_check``.
    def get(self, alpha: tuple) -> float:
        if alpha[0] == "node":
            _, s, j = alpha
            return float(self.theta_node[s, j])
        _, e, j, k = alpha
        return float(self.theta_edge[e, j, k])

    def bumped(self, alpha: tuple, delta: float) -> "OvercompleteParams":
        node = self.theta_node.copy()
        edge = self.theta_edge.copy()
        if alpha[0] == "node":
            node[alpha[1], alpha[2]] += delta
        else:
            edge[alpha[1], alpha[2], alpha[3]] += delta
        return self.replace(node, edge)


def _check_config(x, n: int, m: int) -> np.ndarray:
    arr = np.asarray(x)
    if arr.shape != (n,):
        raise InvalidConfigurationError(f"configuration must have {n} entries, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise InvalidConfigurationError("configuration entries must be integers")
        arr = arr.astype(int)
    if np.any(arr < 0) or np.any(arr >= m):
        raise InvalidConfigurationError(f"states must lie in 0..{m - 1}")
    return arr


def to_overcomplete(p: MinimalIsingParams) -> OvercompleteParams:
    """Indicator form with exactly the same log-score (no additive constant)."""
    g = p.graph
    node = np.zeros((g.node_count, 2))
    edge = np.zeros((g.edge_count, 2, 2))
    if p.coding == "zero_one":
        node[:, 1] = p.node_params
        edge[:, 1, 1] = p.edge_params
    else:
        node[:, 0] = -p.node_params
        node[:, 1] = p.node_params
        sign = np.array([[1.0, -1.0], [-1.0, 1.0]])
        edge[:] = p.edge_params[:, None, None] * sign
    return OvercompleteParams(g, 2, node, edge)


@dataclass(frozen=True)
class EnsembleConfig:
    condition: Literal["attractive", "mixed"]
    edge_strength: float
    rng_seed: int

    def __post_init__(self):
        if self.condition not in ("attractive", "mixed"):
            raise ValueError(f"unknown condition {self.condition!r}")
        if not (np.isfinite(self.edge_strength) and self.edge_strength >= 0):
            raise ValueError("edge strength must be finite and nonnegative")


def sample_ensemble(g: Graph, cfg: EnsembleConfig, *spawn_key: int) -> MinimalIsingParams:
    """Spin model with zero fields and i.i.d. uniform couplings.

    Couplings are ``U[0, d]`` (attractive) or ``U[-d, d]`` (mixed), drawn from
    a PCG64 stream seeded by ``(cfg.rng_seed, *spawn_key)``. The same stream
    scaled by different ``d`` gives proportionally scaled couplings.
    """
    rng = make_rng(cfg.rng_seed, *spawn_key)
    u = rng.random(g.edge_count)
    d = float(cfg.edge_strength)
    if cfg.condition == "attractive":
        edge = d * u
    else:
        edge = d * (2.0 * u - 1.0)
    return MinimalIsingParams(g, np.zeros(g.node_count), edge, coding="spin")


# ---------------------------------------------------------------------------
# JSON model files

def model_to_dict(p: OvercompleteParams | MinimalIsingParams, coding: Coding | None = None) -> dict:
    g = p.graph
    if isinstance(p, MinimalIsingParams):
        return {
            "minimal": True,
            "name": g.name,
            "m": 2,
            "coding": p.coding,
            "nodes": g.node_count,
            "edges": [list(e) for e in g.edges],
            "theta_node": p.node_params.tolist(),
            "theta_edge": p.edge_params.tolist(),
        }
    return {
        "name": g.name,
        "m": p.m,
        "coding": coding or "zero_one",
        "nodes": g.node_count,
        "edges": [list(e) for e in g.edges],
        "theta_node": p.theta_node.tolist(),
        "theta_edge": p.theta_edge.tolist(),
    }


def _field(data: dict, name: str):
    if name not in data:
        raise ModelFormatError(f"model file is missing required field {name!r}")
    return data[name]


def model_from_dict(data: dict) -> tuple[OvercompleteParams, Coding]:
    """Parse a model dictionary into overcomplete form plus its declared coding."""
    if not isinstance(data, dict):
        raise ModelFormatError("model file must contain a JSON object")
    try:
        n = int(_field(data, "nodes"))
        edges = [tuple(int(v) for v in e) for e in _field(data, "edges")]
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"field 'nodes'/'edges' malformed: {exc}") from exc
    coding = data.get("coding", "zero_one")
    if coding not in ("zero_one", "spin"):
        raise ModelFormatError(f"field 'coding' must be 'zero_one' or 'spin', got {coding!r}")
    try:
        g = Graph(n, tuple(edges), name=str(data.get("name", "file")))
    except ValueError as exc:
        raise ModelFormatError(f"field 'edges': {exc}") from exc
    theta_node = _field(data, "theta_node")
    theta_edge = _field(data, "theta_edge")
    try:
        if data.get("minimal", False):
            minimal = MinimalIsingParams(g, theta_node, theta_edge, coding=coding)
            return to_overcomplete(minimal), coding
        m = int(_field(data, "m"))
        return OvercompleteParams(g, m, theta_node, theta_edge), coding
    except (ValueError, TypeError) as exc:
        raise ModelFormatError(f"fields 'theta_node'/'theta_edge': {exc}") from exc


def load_model(path: str | Path) -> tuple[OvercompleteParams, Coding]:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        return model_from_dict(data)
    except ModelFormatError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc


def save_model(p: OvercompleteParams | MinimalIsingParams, path: str | Path, coding: Coding | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(p, coding), indent=2) + "\n")


def example_cycle_model(edge_weights: Sequence[float] = (1.0, 1.0, 1.0, 1.0)) -> OvercompleteParams:
    """Binary 4-cycle in 0/1 coding with zero fields and the given couplings."""
    from .graphs import cycle

    g = cycle(4)
    return to_overcomplete(MinimalIsingParams(g, np.zeros(4), np.asarray(edge_weights, float), "zero_one"))
