"""Command-line interface: ``treebound {bound,exact,meanfield,experiment,treecount}``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .errors import TreeboundError
from .exact import DEFAULT_CAP, brute_force_log_partition, elimination_width, variable_elimination_log_partition
from .experiments import (
    EXACT_METHODS,
    MU_MODES,
    ExperimentConfig,
    default_d_values,
    default_trials,
    run_experiment,
    with_tolerance,
)
from .graphs import count_spanning_trees, parse_graph_spec, spanning_tree_count_exact, uniform_tree_edge_marginals
from .meanfield import naive_mean_field_lower_bound
from .model import EnsembleConfig, OvercompleteParams, load_model, sample_ensemble, to_overcomplete
from .outer import OuterOptions, optimize_edge_appearance, uniform_count_probabilities, unoptimized_bound

EXIT_ERROR = 1
EXIT_UNCONVERGED = 3
TIGHT_TOL = 1e-6
# Exact values are reported alongside a bound only when this cheap.
REPORT_EXACT_CAP = 2**20


def _fmt(values) -> str:
    return " ".join(f"{v:.6f}" for v in values)


def _load_theta(args) -> OvercompleteParams:
    if args.model:
        theta, _ = load_model(args.model)
        return theta
    if not args.graph:
        raise SystemExit("error: one of --model or --graph is required")
    g = parse_graph_spec(args.graph)
    d = 1.0 if args.d_max is None else args.d_max
    return to_overcomplete(sample_ensemble(g, EnsembleConfig(args.condition, d, args.seed), 0))


def _try_exact(theta: OvercompleteParams, cap: int = REPORT_EXACT_CAP) -> float | None:
    g = theta.graph
    if theta.m**g.node_count <= cap:
        return brute_force_log_partition(theta, cap, marginals=False).log_partition
    if theta.m ** elimination_width(g) <= cap:
        return variable_elimination_log_partition(theta, cap=cap)
    return None


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _outer_options(args) -> OuterOptions:
    opts = OuterOptions(max_outer_iterations=args.max_outer, pairwise=args.pairwise)
    return with_tolerance(opts, args.tol) if args.tol is not None else opts


def cmd_bound(args) -> int:
    theta = _load_theta(args)
    g = theta.graph
    opts = _outer_options(args)
    print(f"graph: {g.name} ({g.node_count} nodes, {g.edge_count} edges, m={theta.m})")
    print(f"mode: {args.mode}")
    if args.mode == "optimized":
        sol = optimize_edge_appearance(theta, opts)
        inner, mu, converged = sol.inner, sol.mu, sol.converged
        print(f"bound: {sol.bound:.10f}")
        print(f"mu: {_fmt(mu)}")
        print(f"fw_gap: {max(sol.fw_gap, sol.away_gap):.3e}")
        print(f"outer_iterations: {sol.iterations}")
        print(f"support_trees: {len(sol.witness.trees)}" + (" + uniform base" if sol.witness.base_weight else ""))
        if args.history_csv:
            with open(args.history_csv, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["iteration", "bound", "fw_gap", "step", "tree", "kind"])
                for rec in sol.history:
                    tree = ";".join(f"{g.edges[e][0]}-{g.edges[e][1]}" for e in rec.tree)
                    writer.writerow([rec.iteration, repr(rec.bound), repr(rec.fw_gap), repr(rec.step), tree, rec.kind])
    else:
        mu = uniform_count_probabilities(g) if args.mu == "uniform-count" else uniform_tree_edge_marginals(g)
        inner = unoptimized_bound(theta, mu, opts.inner)
        converged = inner.converged
        print(f"bound: {inner.bound:.10f}")
        print(f"mu ({args.mu}): {_fmt(mu)}")
    print(f"kkt_residual: {inner.kkt_residual:.3e}")
    print(f"inner_iterations: {inner.iterations}")
    print(f"converged: {'yes' if converged else 'NO'}")
    phi = _try_exact(theta)
    if phi is not None:
        gap = inner.bound - phi
        note = " (tight)" if abs(gap) <= TIGHT_TOL else ""
        print(f"exact: {phi:.10f} gap {gap:.3e}{note}")
    if args.json:
        payload = {
            "graph": g.name,
            "mode": args.mode,
            "bound": inner.bound,
            "mu": [float(v) for v in mu],
            "converged": bool(converged),
            "kkt_residual": inner.kkt_residual,
            "exact": phi,
            "pseudomarginals": inner.T.to_dict(),
        }
        _write_json(args.json, payload)
    return 0 if converged else EXIT_UNCONVERGED


def cmd_exact(args) -> int:
    theta = _load_theta(args)
    cap = args.cap
    if args.method == "brute" or (args.method == "auto" and theta.m**theta.graph.node_count <= cap):
        phi = brute_force_log_partition(theta, cap, marginals=False).log_partition
        method = "brute"
    else:
        phi = variable_elimination_log_partition(theta, cap=cap)
        method = "elimination"
    print(f"log_partition: {phi:.10f} ({method})")
    if args.json:
        _write_json(args.json, {"graph": theta.graph.name, "log_partition": phi, "method": method})
    return 0


def cmd_meanfield(args) -> int:
    theta = _load_theta(args)
    res = naive_mean_field_lower_bound(theta, args.restarts, args.seed)
    print(f"lower_bound: {res.lower_bound:.10f}")
    print(f"best_start: {res.best_restart_index} of {res.restarts_used}")
    if args.json:
        _write_json(args.json, {"lower_bound": res.lower_bound, "q": res.q.tolist()})
    return 0


def cmd_treecount(args) -> int:
    g = parse_graph_spec(args.graph)
    log_count = count_spanning_trees(g)
    if log_count is None:
        print(f"{g.name}: disconnected, no spanning trees")
        return 0
    print(f"log_count: {log_count:.10f}")
    print(f"count: {spanning_tree_count_exact(g)}")
    return 0


def cmd_experiment(args) -> int:
    if not args.graph and not args.model:
        raise SystemExit("error: --graph or --model is required")
    outer = _outer_options(args)
    common = dict(
        seed=args.seed,
        exact_method=args.exact_method,
        mu_mode=args.mu,
        outer=outer,
        record_times=not args.no_times,
        cap=args.cap,
    )
    if args.model:
        theta, _ = load_model(args.model)
        cfg = ExperimentConfig(graph=theta.graph, model=theta, **common)
    else:
        g = parse_graph_spec(args.graph)
        cfg = ExperimentConfig(
            graph=g,
            condition=args.condition,
            d_values=default_d_values(g, args.d_steps, args.d_max),
            trials=args.trials if args.trials is not None else default_trials(g),
            **common,
        )
    result = run_experiment(cfg, workers=args.workers)
    if args.out:
        Path(args.out).write_text(result.csv_text())
        summary_path = args.summary or str(Path(args.out).with_suffix(".summary.csv"))
        Path(summary_path).write_text(result.summary_text())
    else:
        sys.stdout.write(result.csv_text())
        if args.summary:
            Path(args.summary).write_text(result.summary_text())
    for s in result.summary:
        print(
            f"d={s.d:.4f}  unopt {s.unopt[0]:+.4e} ± {s.unopt[1]:.1e}  "
            f"opt {s.opt[0]:+.4e} ± {s.opt[1]:.1e}  mf {s.mf[0]:+.4e} ± {s.mf[1]:.1e}",
            file=sys.stderr,
        )
    bad = [(r.d, r.trial, v) for r in result.records for v in r.invariant_violations()]
    for d, k, v in bad:
        print(f"invariant violated at d={d} trial={k}: {v}", file=sys.stderr)
    unconverged = [r for r in result.records if not r.converged]
    if unconverged:
        print(f"{len(unconverged)} of {len(result.records)} trials flagged unconverged", file=sys.stderr)
        return EXIT_UNCONVERGED
    return EXIT_ERROR if bad else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treebound", description="Tree-reweighted upper bounds on log partition functions.")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_source(p):
        p.add_argument("--model", help="model JSON file")
        p.add_argument("--graph", help="grid:RxC, complete:N or cycle:N (samples a model when --model is absent)")
        p.add_argument("--condition", choices=("attractive", "mixed"), default="attractive")
        p.add_argument("--d-max", type=float, default=None, help="edge strength (sampled models) or sweep maximum")
        p.add_argument("--seed", type=int, default=0)

    def solver_flags(p):
        p.add_argument("--tol", type=float, default=None, help="outer gap tolerance (default 1e-6)")
        p.add_argument("--max-outer", type=int, default=OuterOptions.max_outer_iterations)
        p.add_argument("--pairwise", action="store_true", help="pairwise instead of away steps")
        p.add_argument("--mu", choices=MU_MODES, default="uniform-count", help="edge probabilities for the unoptimized bound")

    p = sub.add_parser("bound", help="upper bound for one model")
    model_source(p)
    solver_flags(p)
    p.add_argument("--mode", choices=("unoptimized", "optimized"), default="optimized")
    p.add_argument("--json", help="write the result as JSON")
    p.add_argument("--history-csv", help="write the outer iteration history as CSV")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("exact", help="exact log partition function")
    model_source(p)
    p.add_argument("--method", choices=EXACT_METHODS, default="auto")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.add_argument("--json")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("meanfield", help="naive mean-field lower bound")
    model_source(p)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--json")
    p.set_defaults(func=cmd_meanfield)

    p = sub.add_parser("experiment", help="ensemble sweep over edge strengths")
    model_source(p)
    solver_flags(p)
    p.add_argument("--d-steps", type=int, default=8)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--exact-method", choices=EXACT_METHODS, default="auto")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="trial CSV path (default stdout)")
    p.add_argument("--summary", help="summary CSV path (default <out>.summary.csv)")
    p.add_argument("--no-times", action="store_true", help="write 0 in the timing columns")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("treecount", help="number of spanning trees")
    p.add_argument("--graph", required=True)
    p.set_defaults(func=cmd_treecount)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TreeboundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
