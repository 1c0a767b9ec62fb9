"""Command-line interface: ``entropy-lsh <command> [options]``.

Every option can also be supplied through ``--config FILE``, a file of
``key = value`` lines whose keys are option names (dashes or underscores).
Options given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import index_store
from .bench import AXES, ExperimentConfig, gen_data, load_experiment, query_rng, sweep
from .index_store import attach_fingerprints, build_expanded, build_near_linear
from .math_kernel import PlannerInput, PlanError, expanded_plan, make_plan
from .query_engine import (
    QueryReport,
    brute_force_nn,
    entropy_probe_search,
    expanded_search,
    search_unknown_radius,
)
from .sampling import distance_grid, read_csv_points, read_dataset

QUERY_COLUMNS = [
    "query_id",
    "found_id",
    "found_distance",
    "success",
    "probes_used",
    "points_scanned",
    "far_points_scanned",
    "tables_searched",
    "radius",
    "fallback",
    "query_ms",
]


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _approx_factor(text: str) -> float:
    value = float(text)
    if not value > 1:
        raise argparse.ArgumentTypeError(f"c must exceed 1, got {text}")
    return value


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(" ", "").split(",") if x]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.replace(" ", "").split(",") if x]


def read_points(path: str | Path) -> np.ndarray:
    """Binary dataset by default; ``.csv`` files hold one point per row."""
    return read_csv_points(path) if str(path).endswith(".csv") else read_dataset(path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    paths = gen_data(args.out, args.n, args.d, args.c, args.queries, args.seed)
    for name, path in paths.items():
        print(f"{name}={path}")
    return 0


def _planner_input(args, n: int) -> PlannerInput:
    return PlannerInput(
        n=n,
        c=args.c,
        r=args.r if args.r is not None else 1.0 / args.c,
        D=args.D,
        tables=args.L,
        probe_multiplier=args.probe_multiplier,
        probe_budget=getattr(args, "probe_budget", None),
    )


def _display_count(x: int) -> int | float:
    """Exact below 2**53, a float beyond (replication counts can have hundreds of digits)."""
    return x if x < 2**53 else float(x)


def plan_summary(inp: PlannerInput, epsilon: float | None) -> dict:
    out: dict = {"n": inp.n, "c": inp.c, "r": inp.r, "D": inp.D, "L": inp.tables}
    try:
        plan = make_plan(inp)
        out.update(near_linear_feasible=True, g=plan.g, M=plan.M, rho=plan.rho, rho_times_c=plan.rho * inp.c,
                   k=plan.k, width=plan.width, probe_budget=plan.probe_budget, far_cap=plan.far_cap,
                   near_linear_entries=inp.n * inp.tables)
    except PlanError as exc:
        out.update(near_linear_feasible=False, near_linear_error=str(exc))
    try:
        ep = expanded_plan(inp, epsilon)
        entries = inp.n * ep.replication * inp.tables
        out.update(expanded_feasible=True, expanded_k=ep.k, expanded_epsilon=ep.epsilon,
                   expanded_replication=_display_count(ep.replication), expanded_entries=_display_count(entries),
                   expanded_log2_entries=math.log2(entries),
                   expanded_within_memory_cap=entries * index_store.ENTRY_BYTES <= index_store.DEFAULT_MEMORY_CAP)
        out.setdefault("g", ep.g)
        out.setdefault("M", ep.M)
        out.setdefault("rho", ep.rho)
    except PlanError as exc:
        out.update(expanded_feasible=False, expanded_error=str(exc))
    return out


def cmd_plan(args) -> int:
    summary = plan_summary(_planner_input(args, args.n), args.epsilon)
    for key, value in summary.items():
        print(f"{key}={value}")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_build(args) -> int:
    points = read_points(args.data)
    inp = _planner_input(args, len(points))
    plan = expanded_plan(inp, args.epsilon) if args.variant == "expanded" else make_plan(inp)
    if args.k is not None:
        plan = replace(plan, k=args.k)
    rng = np.random.default_rng([args.seed, 1])
    t0 = time.perf_counter()
    if plan.variant == "expanded":
        index = build_expanded(points, plan, args.L, rng, memory_cap=args.memory_cap)
    else:
        index = build_near_linear(points, plan, args.L, rng)
    if args.fingerprint_bits is not None or args.drop_points:
        index = attach_fingerprints(index, np.random.default_rng([args.seed, 3]), bits=args.fingerprint_bits,
                                    threshold=args.hamming_threshold, drop_points=args.drop_points)
    index_store.save(index, args.out)
    print(f"index={args.out} variant={index.variant} n={index.n} d={index.d} k={plan.k} L={index.L} "
          f"entries={index.total_entries} build_s={time.perf_counter() - t0:.2f}")
    return 0


def _run_one(index, q, i, args) -> QueryReport:
    if index.variant == "expanded":
        return expanded_search(index, q, query_id=i)
    rng = query_rng(args.seed, i)
    if args.r_max is not None:
        r_min = args.r_min if args.r_min is not None else index.plan.r
        grid = distance_grid(r_min, args.r_max, args.grid_epsilon)
        return search_unknown_radius(index, q, index.plan.c, grid, rng, query_id=i, probe_budget=args.probe_budget)
    return entropy_probe_search(index, q, rng=rng, query_id=i, mode=args.mode, probe_budget=args.probe_budget,
                                prefilter=args.prefilter)


def cmd_query(args) -> int:
    index = index_store.load(args.index)
    if args.tables is not None:
        index = replace(index, tables=index.tables[: args.tables])
    queries = read_points(args.queries)
    fallback_points = read_points(args.fallback_data) if args.fallback_data else None
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=QUERY_COLUMNS)
        writer.writeheader()
        successes = 0
        for i, q in enumerate(queries):
            t0 = time.perf_counter()
            rep = _run_one(index, q, i, args)
            row = asdict(rep)
            row["fallback"] = False
            if not rep.success and fallback_points is not None:
                nn, dist = brute_force_nn(fallback_points, q)
                row.update(found_id=nn, found_distance=dist, success=dist <= index.plan.c * index.plan.r,
                           fallback=True)
            row["query_ms"] = 1000 * (time.perf_counter() - t0)
            successes += bool(row["success"])
            writer.writerow({k: row[k] for k in QUERY_COLUMNS})
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"queries={len(queries)} successes={successes}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    config = ExperimentConfig(
        n=args.n, d=args.d, c=args.c, queries=args.queries, seeds=args.seeds, r=args.r, D=args.D, k=args.k,
        L=args.L, probe_multiplier=args.probe_multiplier, epsilon=args.epsilon, variant=args.variant, mode=args.mode,
    )
    data = queries = truth = None
    if args.data:
        data, queries, truth, _ = load_experiment(args.data)
    result = sweep(config, args.axis, args.values, args.out, data=data, queries=queries, truth=truth)
    for row in result.rows:
        print(f"{args.axis}={row['value']} seed={row['seed']} recall={row['recall']:.3f} "
              f"mean_probes={row['mean_probes']:.1f} mean_far={row['mean_far']:.1f}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite

    results = run_suite(args.suite)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_plan_options(p: argparse.ArgumentParser, *, with_n: bool) -> None:
    if with_n:
        p.add_argument("--n", type=_positive_int, required=False, default=None, help="number of points")
    p.add_argument("--c", type=_approx_factor, default=2.0, help="approximation factor (> 1)")
    p.add_argument("--r", type=_positive_float, default=None, help="near radius (default 1/c)")
    p.add_argument("--D", type=_positive_float, default=3.0, help="interval width in units of c*r")
    p.add_argument("--L", type=_positive_int, default=1, help="number of tables")
    p.add_argument("--probe-multiplier", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=None, help="expansion slack for the expanded variant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entropy-lsh", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--config", help="file of key = value option defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", allow_abbrev=False, help="write a Gaussian instance with planted queries")
    p.add_argument("--n", type=_positive_int, default=10_000)
    p.add_argument("--d", type=_positive_int, default=1024)
    p.add_argument("--c", type=_approx_factor, default=2.0)
    p.add_argument("--queries", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("plan", allow_abbrev=False, help="print the derived search parameters")
    _add_plan_options(p, with_n=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("build", allow_abbrev=False, help="build and save an index")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_plan_options(p, with_n=False)
    p.add_argument("--k", type=_positive_int, default=None, help="override the number of projections")
    p.add_argument("--variant", choices=index_store.VARIANTS, default="near_linear")
    p.add_argument("--probe-budget", type=_non_negative_int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--memory-cap", type=int, default=index_store.DEFAULT_MEMORY_CAP)
    p.add_argument("--fingerprint-bits", type=_positive_int, default=None)
    p.add_argument("--hamming-threshold", type=_non_negative_int, default=None)
    p.add_argument("--drop-points", action="store_true", help="keep only fingerprints")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", allow_abbrev=False, help="answer queries against a saved index, one CSV row each")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("decision", "optimize"), default="decision")
    p.add_argument("--probe-budget", type=_non_negative_int, default=None)
    p.add_argument("--tables", type=_positive_int, default=None, help="search only the first TABLES tables")
    p.add_argument("--prefilter", type=_non_negative_int, default=None, help="Hamming prefilter threshold")
    p.add_argument("--r-min", type=_positive_float, default=None)
    p.add_argument("--r-max", type=_positive_float, default=None, help="search a radius grid up to R_MAX")
    p.add_argument("--grid-epsilon", type=_positive_float, default=0.1)
    p.add_argument("--fallback-data", default=None, help="dataset for a linear scan when the index misses")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("sweep", allow_abbrev=False, help="recall and cost along one parameter axis")
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--values", type=_float_list, required=True, help="comma-separated axis values")
    p.add_argument("--out", default=None)
    p.add_argument("--data", default=None, help="dataset from gen-data (default: fresh instance per seed)")
    p.add_argument("--n", type=_positive_int, default=10_000)
    p.add_argument("--d", type=_positive_int, default=1024)
    p.add_argument("--queries", type=_positive_int, default=100)
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--k", type=_positive_int, default=None)
    p.add_argument("--variant", choices=index_store.VARIANTS, default="near_linear")
    p.add_argument("--mode", choices=("decision", "optimize"), default="decision")
    _add_plan_options(p, with_n=False)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", allow_abbrev=False, help="run an acceptance suite; exit status 1 on any failure")
    p.add_argument("--suite", choices=("math", "hash", "endtoend", "all"), default="all")
    p.set_defaults(func=cmd_verify)
    return parser


def read_config(path: str | Path) -> dict[str, str]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string("[options]\n" + Path(path).read_text())
    return {k.strip().replace("-", "_"): v.strip() for k, v in cp["options"].items()}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre_parser = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre_parser.add_argument("--config")
    pre, _ = pre_parser.parse_known_args(argv)
    if pre.config:
        defaults = read_config(pre.config)
        for action in parser._subparsers._group_actions:
            for sp in action.choices.values():
                for a in sp._actions:
                    if a.dest not in defaults:
                        continue
                    value = defaults[a.dest]
                    if isinstance(a, argparse._StoreTrueAction):
                        value = value.lower() in ("1", "true", "yes", "on")
                    sp.set_defaults(**{a.dest: value})
                    a.required = False
    args = parser.parse_args(argv)
    if args.command == "plan" and args.n is None:
        parser.error("plan needs --n")
    try:
        return args.func(args)
    except (ValueError, PlanError, index_store.IndexBuildError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
