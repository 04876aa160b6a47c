"""Ensemble experiments: exact values, upper bounds and mean-field bounds per trial."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidConfigurationError, ProblemTooLargeError
from .exact import DEFAULT_CAP, brute_force_log_partition, elimination_width, variable_elimination_log_partition
from .graphs import Graph, parse_graph_spec, uniform_tree_edge_marginals
from .inner import InnerOptions
from .meanfield import naive_mean_field_lower_bound
from .model import EnsembleConfig, OvercompleteParams, sample_ensemble, to_overcomplete
from .outer import OuterOptions, optimize_edge_appearance, uniform_count_probabilities, unoptimized_bound

CSV_COLUMNS = (
    "graph", "condition", "d", "trial", "phi_exact", "bound_unopt", "bound_opt", "mf_lower",
    "relerr_unopt", "relerr_opt", "relerr_mf", "secs_inner", "secs_outer",
)
SUMMARY_COLUMNS = (
    "graph", "condition", "d", "trials",
    "relerr_unopt_mean", "relerr_unopt_std", "relerr_opt_mean", "relerr_opt_std",
    "relerr_mf_mean", "relerr_mf_std",
)
EXACT_METHODS = ("auto", "brute", "elimination")
MU_MODES = ("uniform-count", "matrix-tree")
INVARIANT_SLACK = 1e-8
MF_SLACK = 1e-9


def default_d_values(graph: Graph, steps: int = 8, d_max: float | None = None) -> tuple[float, ...]:
    """``steps`` evenly spaced strengths from 0 to ``d_max`` (default ``4 / sqrt(N)``)."""
    if steps < 1:
        raise ValueError("d_steps must be >= 1")
    d_max = 4.0 / math.sqrt(graph.node_count) if d_max is None else float(d_max)
    return tuple(float(d) for d in np.linspace(0.0, d_max, steps))


def default_trials(graph: Graph) -> int:
    """30 trials for grids, 10 for everything else."""
    return 30 if graph.name.startswith("grid") else 10


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep over edge strengths on a single graph and condition.

    Attributes
    ----------
    graph : Graph
    condition : {"attractive", "mixed"}
    d_values : tuple of float
    trials : int
        Trials per strength. Trial ``k`` draws the same uniforms at every ``d``.
    seed : int
    exact_method : {"auto", "brute", "elimination"}
        ``"auto"`` enumerates when ``2**N`` fits under ``cap`` and eliminates otherwise.
    mu_mode : {"uniform-count", "matrix-tree"}
        Edge probabilities used for the unoptimized bound.
    model : OvercompleteParams, optional
        Fixed model replacing the random ensemble; produces a single row.
    record_times : bool
        When false the two timing columns are written as 0 so that reruns
        compare byte-for-byte.
    """

    graph: Graph
    condition: str = "attractive"
    d_values: tuple[float, ...] = ()
    trials: int = 1
    seed: int = 0
    exact_method: str = "auto"
    mu_mode: str = "uniform-count"
    model: OvercompleteParams | None = None
    outer: OuterOptions = OuterOptions()
    mf_restarts: int = 5
    cap: int = DEFAULT_CAP
    record_times: bool = True

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidConfigurationError("trials must be >= 1")
        if any(d < 0 or not math.isfinite(d) for d in self.d_values):
            raise InvalidConfigurationError("edge strengths must be finite and nonnegative")
        if self.model is None and not self.d_values:
            raise InvalidConfigurationError("at least one edge strength is required")
        if self.condition not in ("attractive", "mixed", "fixed"):
            raise InvalidConfigurationError(f"unknown condition {self.condition!r}")
        if self.exact_method not in EXACT_METHODS:
            raise InvalidConfigurationError(f"unknown exact method {self.exact_method!r}")
        if self.mu_mode not in MU_MODES:
            raise InvalidConfigurationError(f"unknown mu mode {self.mu_mode!r}")

    @classmethod
    def from_spec(cls, graph_spec: str, **kwargs) -> "ExperimentConfig":
        g = parse_graph_spec(graph_spec)
        kwargs.setdefault("d_values", default_d_values(g))
        kwargs.setdefault("trials", default_trials(g))
        return cls(graph=g, **kwargs)


@dataclass(frozen=True)
class TrialRecord:
    graph: str
    condition: str
    d: float
    trial: int
    phi_exact: float
    bound_unopt: float
    bound_opt: float
    mf_lower: float
    secs_inner: float
    secs_outer: float
    converged: bool = field(default=True, compare=False)

    @staticmethod
    def _relerr(bound: float, phi: float) -> float:
        return (bound - phi) / phi if phi != 0 else math.nan

    @property
    def relerr_unopt(self) -> float:
        return self._relerr(self.bound_unopt, self.phi_exact)

    @property
    def relerr_opt(self) -> float:
        return self._relerr(self.bound_opt, self.phi_exact)

    @property
    def relerr_mf(self) -> float:
        return self._relerr(self.mf_lower, self.phi_exact)

    def row(self) -> list[str]:
        values = [
            self.phi_exact, self.bound_unopt, self.bound_opt, self.mf_lower,
            self.relerr_unopt, self.relerr_opt, self.relerr_mf,
        ]
        return (
            [self.graph, self.condition, repr(self.d), str(self.trial)]
            + [repr(float(v)) for v in values]
            + [f"{self.secs_inner:.6f}", f"{self.secs_outer:.6f}"]
        )

    def invariant_violations(self) -> list[str]:
        """Names of the per-row inequalities that fail."""
        bad = []
        if self.bound_opt > self.bound_unopt + INVARIANT_SLACK:
            bad.append("bound_opt <= bound_unopt")
        if self.bound_unopt < self.phi_exact - INVARIANT_SLACK:
            bad.append("bound_unopt >= phi_exact")
        if self.bound_opt < self.phi_exact - INVARIANT_SLACK:
            bad.append("bound_opt >= phi_exact")
        if self.mf_lower > self.phi_exact + MF_SLACK:
            bad.append("mf_lower <= phi_exact")
        return bad


def check_exact_feasible(cfg: ExperimentConfig) -> str:
    """Resolve the exact method, raising before any work if it would exceed the cap."""
    g = cfg.graph
    m = cfg.model.m if cfg.model is not None else 2
    brute_ok = m**g.node_count <= cfg.cap
    if cfg.exact_method == "brute" or (cfg.exact_method == "auto" and brute_ok):
        if not brute_ok:
            raise ProblemTooLargeError(
                f"brute force on {g.name} needs {m}^{g.node_count} configurations", cfg.cap
            )
        return "brute"
    width = elimination_width(g)
    if m**width > cfg.cap:
        raise ProblemTooLargeError(
            f"variable elimination on {g.name} builds a table over {width} variables", cfg.cap
        )
    return "elimination"


def _exact(theta: OvercompleteParams, method: str, cap: int) -> float:
    if method == "brute":
        return brute_force_log_partition(theta, cap, marginals=False).log_partition
    return variable_elimination_log_partition(theta, cap=cap)


def _mf_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(trial, 1)).generate_state(1)[0])


def run_trial(cfg: ExperimentConfig, d: float, trial: int, method: str | None = None) -> TrialRecord:
    """Exact value and all three bounds for one model draw."""
    method = check_exact_feasible(cfg) if method is None else method
    g = cfg.graph
    if cfg.model is not None:
        theta = cfg.model
    else:
        theta = to_overcomplete(sample_ensemble(g, EnsembleConfig(cfg.condition, d, cfg.seed), trial))
    phi = _exact(theta, method, cfg.cap)
    mu = uniform_count_probabilities(g) if cfg.mu_mode == "uniform-count" else uniform_tree_edge_marginals(g)

    start = time.perf_counter()
    unopt = unoptimized_bound(theta, mu, cfg.outer.inner)
    secs_inner = time.perf_counter() - start
    start = time.perf_counter()
    opt = optimize_edge_appearance(theta, cfg.outer)
    secs_outer = time.perf_counter() - start
    mf = naive_mean_field_lower_bound(theta, cfg.mf_restarts, _mf_seed(cfg.seed, trial))
    if not cfg.record_times:
        secs_inner = secs_outer = 0.0
    return TrialRecord(
        graph=g.name,
        condition=cfg.condition,
        d=float(d),
        trial=int(trial),
        phi_exact=phi,
        bound_unopt=unopt.bound,
        bound_opt=opt.bound,
        mf_lower=mf.lower_bound,
        secs_inner=secs_inner,
        secs_outer=secs_outer,
        converged=bool(unopt.converged and opt.converged),
    )


def _job(args):
    cfg, d, trial, method = args
    return run_trial(cfg, d, trial, method)


@dataclass(frozen=True)
class SummaryRow:
    graph: str
    condition: str
    d: float
    trials: int
    unopt: tuple[float, float]
    opt: tuple[float, float]
    mf: tuple[float, float]

    def row(self) -> list[str]:
        vals = [*self.unopt, *self.opt, *self.mf]
        return [self.graph, self.condition, repr(self.d), str(self.trials)] + [repr(float(v)) for v in vals]


@dataclass
class ExperimentResult:
    records: list[TrialRecord]
    summary: list[SummaryRow]

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.records)

    def csv_text(self) -> str:
        return _to_csv(CSV_COLUMNS, [r.row() for r in self.records])

    def summary_text(self) -> str:
        return _to_csv(SUMMARY_COLUMNS, [s.row() for s in self.summary])


def _to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def summarize(records: Sequence[TrialRecord]) -> list[SummaryRow]:
    """Mean and population standard deviation of each relative error per ``d``."""
    groups: dict[tuple, list[TrialRecord]] = {}
    for r in records:
        groups.setdefault((r.graph, r.condition, r.d), []).append(r)
    out = []
    for (graph, condition, d), rows in sorted(groups.items(), key=lambda kv: kv[0][2]):
        def stat(name):
            vals = np.array([getattr(r, name) for r in rows])
            return float(np.mean(vals)), float(np.std(vals))

        out.append(SummaryRow(graph, condition, d, len(rows), stat("relerr_unopt"), stat("relerr_opt"), stat("relerr_mf")))
    return out


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """All trials of ``cfg``, sorted by ``(d, trial)``, with per-``d`` summaries."""
    method = check_exact_feasible(cfg)
    if cfg.model is not None:
        cfg = replace(cfg, condition="fixed")
        jobs = [(cfg, math.nan, 0, method)]
    else:
        jobs = [(cfg, d, k, method) for d in cfg.d_values for k in range(cfg.trials)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_job, jobs))
    else:
        records = [_job(j) for j in jobs]
    records.sort(key=lambda r: (r.d, r.trial))
    return ExperimentResult(records, summarize(records))


def with_tolerance(opts: OuterOptions, tol: float) -> OuterOptions:
    """Outer options with ``tol`` as the gap tolerance and ``tol * 1e-2`` for the inner residual."""
    return replace(opts, fw_gap_tolerance=tol, inner=InnerOptions(kkt_tolerance=min(1e-8, tol * 1e-2)))
