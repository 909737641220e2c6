#!/usr/bin/env python3
"""
Tomogravity Command Line
Traffic matrix estimation from link loads, plus the experiment drivers:

    estimate       estimate one snapshot (itg, stg, ertg, sg)
    compare        score several methods over a snapshot series
    sweep-missing  ITG error as edge links go missing
    gen-synthetic  write a synthetic truth/load series

Exit codes: 0 ok, 1 not converged, 2 usage, 3 parse error, 4 I/O error,
5 infeasible or inconsistent system, 6 other invalid input.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from errors import TomogravityError
from estimator_presets import describe_outcome, get_preset, run_preset
from evaluation import (
    DEFAULT_FLOW_GRID,
    DEFAULT_K_MAX,
    DEFAULT_REPS,
    DEFAULT_T_STAR,
    FLOW_UNIT,
    compare_methods,
    missing_link_sweep,
    relative_total_error,
)
from network_model import TrafficVector
from settings import EstimatorConfig, Settings, build_estimator_config, load_config_file
from synthetic_traffic import (
    BUILTIN_TOPOLOGIES,
    DEFAULT_STEPS,
    DEFAULT_TOTAL_FLOW,
    SyntheticSpec,
    builtin_topology,
    generate_synthetic,
)
from topology_io import TopologyParser, export_results, format_table, read_series, write_series

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_OTHER = 6


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got '{text}'") from None


def _method_list(text: str) -> List[str]:
    return [m for m in text.replace(",", " ").split() if m]


def _add_estimator_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("estimator options (override --config)")
    group.add_argument("--config", type=Path, help="TOML file with an [estimator] section")
    group.add_argument("--phi", type=float, help="ERTG penalty weight (default 0.001)")
    group.add_argument("--outer-tol", type=float, help="ITG stop when the KL decrease falls below this")
    group.add_argument("--inner-tol", type=float, help="projection residual / dual improvement tolerance")
    group.add_argument("--max-iters", type=int, help="ITG outer iteration cap")
    group.add_argument("--max-sweeps", type=int, help="projection Newton sweep cap")
    group.add_argument("--init", choices=("uniform", "gravity"), help="ITG initial gravity vector")
    group.add_argument("--starts", type=int, help="ITG multi-start count")
    group.add_argument("--seed", type=int, help="random seed (default 0)")
    group.add_argument("--clamp", action="store_true", default=None, help="clip negative STG components to 0")
    group.add_argument("--gravity-exclude-self", action="store_true", default=None,
                       help="fit the gravity step on non-self pairs only")


def _estimator_config(args: argparse.Namespace, method: Optional[str] = None) -> EstimatorConfig:
    overrides = {
        "method": method,
        "phi": args.phi,
        "outer_tol": args.outer_tol,
        "inner_tol": args.inner_tol,
        "max_iters": args.max_iters,
        "max_sweeps": args.max_sweeps,
        "init": args.init,
        "starts": args.starts,
        "seed": args.seed,
        "clamp": args.clamp,
        "gravity_exclude_self": args.gravity_exclude_self,
    }
    return build_estimator_config(load_config_file(args.config), overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tomogravity",
        description="Traffic matrix estimation from link loads (iterative tomogravity and baselines)",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate the traffic matrix of one snapshot")
    est.add_argument("--topology", type=Path, required=True, help="topology + routing file")
    est.add_argument("--loads", type=Path, required=True, help="link-load snapshot")
    est.add_argument("--truth", type=Path, help="true traffic matrix, for the relative total error")
    est.add_argument("-o", "--output", type=Path, help="write the estimate here (default: stdout)")
    est.add_argument("--report", type=Path, help="write a JSON report here")
    est.add_argument("--method", help="itg, itg-gravity, stg, ertg or sg (default itg)")
    _add_estimator_flags(est)
    est.set_defaults(handler=cmd_estimate)

    cmp_ = sub.add_parser("compare", help="score several methods over a snapshot series")
    cmp_.add_argument("--series", type=Path, required=True, help="series directory (manifest.json)")
    cmp_.add_argument("--methods", type=_method_list, default=["itg", "stg", "ertg"],
                      help="comma-separated methods (default itg,stg,ertg)")
    cmp_.add_argument("--steps", type=int, help="use the first N snapshots")
    cmp_.add_argument("--t-star", type=int, default=DEFAULT_T_STAR, help="per-pair error window (default 72)")
    cmp_.add_argument("--grid", type=_float_list, default=list(DEFAULT_FLOW_GRID),
                      help="flow grid in --flow-unit units")
    cmp_.add_argument("--flow-unit", type=float, default=FLOW_UNIT, help="flow grid unit (default 1e10)")
    cmp_.add_argument("--phi-grid", type=_float_list, default=[], help="also scan ERTG over these phi values")
    cmp_.add_argument("-o", "--output", type=Path, help="JSON results")
    cmp_.add_argument("--table", type=Path, help="TSV per-snapshot table")
    _add_estimator_flags(cmp_)
    cmp_.set_defaults(handler=cmd_compare)

    sweep = sub.add_parser("sweep-missing", help="ITG error with k randomly missing edge links")
    sweep.add_argument("--series", type=Path, required=True, help="series directory (manifest.json)")
    sweep.add_argument("--k-max", type=int, default=DEFAULT_K_MAX, help="largest k (default 5)")
    sweep.add_argument("--reps", type=int, default=DEFAULT_REPS, help="patterns per k (default 10)")
    sweep.add_argument("--steps", type=int, default=24, help="snapshots averaged per pattern (default 24)")
    sweep.add_argument("--workers", type=int, help="worker threads (default from settings)")
    sweep.add_argument("-o", "--output", type=Path, help="JSON results")
    _add_estimator_flags(sweep)
    sweep.set_defaults(handler=cmd_sweep_missing)

    gen = sub.add_parser("gen-synthetic", help="write a synthetic truth/load series")
    gen.add_argument("--topology", required=True,
                     help=f"built-in ({', '.join(BUILTIN_TOPOLOGIES)}) or a topology file")
    gen.add_argument("--out", type=Path, required=True, help="output series directory")
    gen.add_argument("--steps", type=int, default=DEFAULT_STEPS, help="snapshots (default 72)")
    gen.add_argument("--delta", type=float, default=0.0, help="log-normal deviation from gravity (default 0)")
    gen.add_argument("--total-flow", type=float, default=DEFAULT_TOTAL_FLOW, help="total flow per step")
    gen.add_argument("--diurnal-amplitude", type=float, default=0.0, help="relative daily swing of the total")
    gen.add_argument("--profile-sigma", type=float, default=1.0, help="log-normal spread of node weights")
    gen.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    gen.set_defaults(handler=cmd_gen_synthetic)
    return parser


# ============================================================================
# Commands
# ============================================================================

def cmd_estimate(args: argparse.Namespace, settings: Settings) -> int:
    config = _estimator_config(args, method=args.method)
    preset = get_preset(config.method)
    topology, loads, truth = TopologyParser.load_problem(
        settings.resolve(args.topology),
        settings.resolve(args.loads),
        settings.resolve(args.truth) if args.truth else None,
    )
    routing = topology.routing

    outcome = run_preset(preset, routing, loads, config.itg_options(), phi=config.phi, clamp=config.clamp)
    estimate = TrafficVector(np.maximum(outcome.values, 0.0), topology.index)
    summary: Dict[str, Any] = describe_outcome(outcome)
    if truth is not None:
        summary["relative_total_error"] = relative_total_error(outcome.values, truth, exclude_self=True,
                                                               index=topology.index)

    echo = {"command": "estimate", **config.model_dump(), "topology": str(args.topology), "loads": str(args.loads)}
    traffic_text = TopologyParser.format_traffic(estimate, echo)
    flows = {f"{s} {d}": v for (s, d), v in estimate.as_mapping().items()}
    report_text = export_results({"config": echo, "summary": summary, "estimate": flows})

    if args.output:
        TopologyParser.write_text(args.output, traffic_text)
    else:
        sys.stdout.write(traffic_text)
    if args.report:
        TopologyParser.write_text(args.report, report_text)

    rows = [(key, value) for key, value in summary.items() if not isinstance(value, (list, tuple))]
    if args.output:
        sys.stdout.write(format_table(("field", "value"), rows))
    else:
        for key, value in rows:
            logger.info(f"{key}: {value}")
    return EXIT_OK if outcome.converged else EXIT_NOT_CONVERGED


def cmd_compare(args: argparse.Namespace, settings: Settings) -> int:
    config = _estimator_config(args)
    topology, truth, loads, series_config = read_series(settings.resolve(args.series), args.steps)
    result = compare_methods(
        topology.routing,
        loads,
        truth,
        methods=args.methods,
        itg_options=config.itg_options(),
        phi=config.phi,
        clamp=config.clamp,
        t_star=args.t_star,
        grid=args.grid,
        flow_unit=args.flow_unit,
        phi_grid=args.phi_grid,
    )

    header = ("t", *result.methods)
    rows = [(t, *(result.snapshot_errors[m][t] for m in result.methods)) for t in range(len(loads))]
    rows.append(("mean", *(result.mean_errors[m] for m in result.methods)))

    group_header = ("lower", "upper", *(f"count_{m}" for m in result.methods), *(f"error_{m}" for m in result.methods))
    first = result.groups[result.methods[0]]
    group_rows = [
        (g.lower, g.upper,
         *(result.groups[m][k].count for m in result.methods),
         *(result.groups[m][k].mean_error for m in result.methods))
        for k, g in enumerate(first)
    ]

    echo = {"command": "compare", "series": str(args.series), "series_config": series_config,
            "methods": list(result.methods), "t_star": result.t_star, "grid": list(args.grid),
            "flow_unit": args.flow_unit, "phi_grid": list(args.phi_grid), **config.model_dump()}
    payload = {
        "config": echo,
        "snapshot_errors": result.snapshot_errors,
        "mean_errors": result.mean_errors,
        "converged": result.converged,
        "groups": {m: [vars(g) for g in groups] for m, groups in result.groups.items()},
        "zero_flow_pairs": {m: len(t.zero_flow) for m, t in result.temporal.items()},
        "phi_scan": [vars(p) for p in result.phi_points],
    }
    json_text = export_results(payload) if args.output else None
    tsv_text = export_results({"config": echo, "header": header, "rows": rows}, format="tsv") if args.table else None

    if json_text is not None:
        TopologyParser.write_text(args.output, json_text)
    if tsv_text is not None:
        TopologyParser.write_text(args.table, tsv_text)

    sys.stdout.write(format_table(header, rows))
    sys.stdout.write("\n" + format_table(group_header, group_rows))
    if result.phi_points:
        sys.stdout.write("\n" + format_table(("phi", "mean_error"), [(p.phi, p.mean_error) for p in result.phi_points]))
    return EXIT_OK if result.all_converged else EXIT_NOT_CONVERGED


def cmd_sweep_missing(args: argparse.Namespace, settings: Settings) -> int:
    config = _estimator_config(args)
    topology, truth, loads, series_config = read_series(settings.resolve(args.series), args.steps)
    workers = args.workers or settings.workers

    def progress(done: int, total: int) -> None:
        logger.debug(f"Sweep progress: {done}/{total} cells")

    points = missing_link_sweep(
        topology.routing,
        loads,
        truth,
        k_max=args.k_max,
        reps=args.reps,
        seed=config.seed,
        options=config.itg_options(),
        workers=workers,
        progress_callback=progress,
    )

    echo = {"command": "sweep-missing", "series": str(args.series), "series_config": series_config,
            "k_max": args.k_max, "reps": args.reps, "steps": len(loads), **config.model_dump()}
    json_text = export_results({"config": echo, "points": [vars(p) for p in points]}) if args.output else None
    if json_text is not None:
        TopologyParser.write_text(args.output, json_text)

    sys.stdout.write(format_table(("k", "mean_error", "patterns"), [(p.k, p.mean_error, len(p.cell_errors)) for p in points]))
    return EXIT_OK if all(p.converged for p in points) else EXIT_NOT_CONVERGED


def cmd_gen_synthetic(args: argparse.Namespace, settings: Settings) -> int:
    if args.topology in BUILTIN_TOPOLOGIES:
        topology = builtin_topology(args.topology)
    else:
        topology = TopologyParser.read_topology(settings.resolve(args.topology))

    spec = SyntheticSpec(
        topology=topology,
        steps=args.steps,
        delta=args.delta,
        total_flow=args.total_flow,
        profile_sigma=args.profile_sigma,
        diurnal_amplitude=args.diurnal_amplitude,
        seed=args.seed,
    )
    series = generate_synthetic(spec)
    echo = {"command": "gen-synthetic", "topology": args.topology, **spec.config()}
    write_series(args.out, topology, series.truth, series.loads, echo)

    sys.stdout.write(format_table(
        ("steps", "pairs", "links", "delta", "seed"),
        [(spec.steps, topology.index.pair_count, topology.routing.link_count, spec.delta, spec.seed)],
    ))
    return EXIT_OK


# ============================================================================
# Entry point
# ============================================================================

def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = Settings()
    except ValueError as e:
        parser.error(f"invalid environment settings: {e}")

    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    else:
        level = getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)

    try:
        return args.handler(args, settings)
    except TomogravityError as e:
        logger.error(f"❌ {e}")
        return e.exit_code
    except (ValueError, RuntimeError) as e:
        logger.error(f"❌ {e}")
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
