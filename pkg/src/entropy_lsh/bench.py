"""Experiment harness: planted datasets, query runs and parameter sweeps."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .index_store import Index, build_expanded, build_near_linear
from .math_kernel import PlannerInput, SearchPlan, expanded_plan, make_plan
from .query_engine import QueryReport, brute_force_nn, entropy_probe_search, expanded_search
from .sampling import RandomInstanceSpec, gaussian_instance, planted_queries, read_dataset, write_dataset

SWEEP_FORMAT = "entropy-lsh sweep v1"
SWEEP_COLUMNS = [
    "axis",
    "value",
    "variant",
    "seed",
    "n",
    "d",
    "c",
    "r",
    "D",
    "k",
    "L",
    "probe_budget",
    "replication",
    "recall",
    "mean_probes",
    "mean_far",
    "mean_query_ms",
    "index_entries",
    "entries_per_point",
    "raw_entries_per_point",
    "nn_found",
]
AXES = ("probe_multiplier", "c", "D", "L")


@dataclass
class ExperimentConfig:
    n: int = 10_000
    d: int = 1024
    c: float = 2.0
    queries: int = 100
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    r: float | None = None  # defaults to the planted distance 1/c
    D: float = 3.0
    k: int | None = None
    L: int = 1
    probe_multiplier: float = 1.0
    epsilon: float | None = None
    variant: str = "near_linear"
    mode: str = "decision"

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.variant not in ("near_linear", "expanded"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def radius(self) -> float:
        return self.r if self.r is not None else 1.0 / self.c


@dataclass
class SweepResult:
    rows: list[dict] = field(default_factory=list)

    def recalls(self) -> list[float]:
        return [row["recall"] for row in self.rows]


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def sidecar_paths(data_path: str | Path) -> dict[str, Path]:
    p = Path(data_path)
    stem = p.with_suffix("")
    return {
        "queries": stem.with_name(stem.name + ".queries.bin"),
        "truth": stem.with_name(stem.name + ".truth.csv"),
        "meta": stem.with_name(stem.name + ".meta.json"),
    }


def gen_data(path: str | Path, n: int, d: int, c: float, queries: int, seed: int) -> dict[str, Path]:
    """Write a Gaussian instance with planted queries at distance ~1/c.

    The sidecars hold the query points, the exact nearest neighbour of each
    query (by linear scan) and the generation parameters.
    """
    spec = RandomInstanceSpec(n=n, d=d, query_distance=1.0 / c)
    rng = np.random.default_rng(seed)
    points = gaussian_instance(spec, rng)
    qs, anchors = planted_queries(points, queries, spec.query_distance, rng)
    paths = sidecar_paths(path)
    write_dataset(path, points)
    write_dataset(paths["queries"], qs)
    with open(paths["truth"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query_id", "planted_id", "nn_id", "nn_distance"])
        for i, q in enumerate(qs):
            nn, dist = brute_force_nn(points, q)
            w.writerow([i, int(anchors[i]), nn, repr(dist)])
    paths["meta"].write_text(
        json.dumps({"n": n, "d": d, "c": c, "queries": queries, "seed": seed, "query_distance": spec.query_distance})
    )
    return {"data": Path(path), **paths}


def read_truth(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {"query_id": int(r["query_id"]), "planted_id": int(r["planted_id"]), "nn_id": int(r["nn_id"]),
             "nn_distance": float(r["nn_distance"])}
            for r in csv.DictReader(fh)
        ]


# ---------------------------------------------------------------------------
# Running queries
# ---------------------------------------------------------------------------


def plan_for(config: ExperimentConfig, n: int) -> SearchPlan:
    inp = PlannerInput(n=n, c=config.c, r=config.radius, D=config.D, tables=config.L,
                       probe_multiplier=config.probe_multiplier)
    plan = expanded_plan(inp, config.epsilon) if config.variant == "expanded" else make_plan(inp)
    if config.k is not None:
        plan = replace(plan, k=config.k)
    return plan


def build_index(points: np.ndarray, plan: SearchPlan, seed: int) -> Index:
    rng = np.random.default_rng([seed, 1])
    if plan.variant == "expanded":
        return build_expanded(points, plan, plan.tables, rng)
    return build_near_linear(points, plan, plan.tables, rng)


def query_rng(seed: int, query_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2, query_id])


def run_queries(
    index: Index,
    queries: np.ndarray,
    seed: int,
    *,
    mode: str = "decision",
    probe_budget: int | None = None,
    timings: list[float] | None = None,
) -> list[QueryReport]:
    """One report per query; query ``i`` always uses the generator ``(seed, 2, i)``."""
    reports = []
    for i, q in enumerate(queries):
        t0 = time.perf_counter()
        if index.variant == "expanded":
            rep = expanded_search(index, q, query_id=i)
        else:
            rep = entropy_probe_search(index, q, rng=query_rng(seed, i), query_id=i, mode=mode,
                                       probe_budget=probe_budget)
        if timings is not None:
            timings.append(time.perf_counter() - t0)
        reports.append(rep)
    return reports


def nn_found_rate(reports: Sequence[QueryReport], truth: Sequence[dict]) -> float:
    by_id = {row["query_id"]: row["nn_id"] for row in truth}
    return sum(r.found_id is not None and r.found_id == by_id.get(r.query_id) for r in reports) / len(reports)


def recall(reports: Iterable[QueryReport]) -> float:
    reports = list(reports)
    return sum(r.success for r in reports) / len(reports) if reports else 0.0


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def _config_for(config: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "L":
        return replace(config, L=int(value))
    if axis == "c":
        return replace(config, c=float(value))
    if axis == "D":
        return replace(config, D=float(value))
    return replace(config, probe_multiplier=float(value))


def sweep(
    config: ExperimentConfig,
    axis: str,
    values: Sequence[float],
    out_csv: str | Path | None = None,
    *,
    data: np.ndarray | None = None,
    queries: np.ndarray | None = None,
    truth: Sequence[dict] | None = None,
) -> SweepResult:
    """Build, query and aggregate one CSV row per (axis value, seed).

    Without ``data`` a fresh planted instance is generated per seed.  With a
    ``truth`` sidecar the ``nn_found`` column is the fraction of queries that
    returned the exact nearest neighbour.  An
    index is reused across values of ``probe_multiplier``, which does not
    change the structure.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    result = SweepResult()
    fh = writer = None
    if out_csv is not None:
        fh = open(out_csv, "w", newline="")
        fh.write(f"# {SWEEP_FORMAT}\n")
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        fh.flush()
    try:
        for seed in config.seeds:
            if data is None:
                rng = np.random.default_rng(seed)
                spec = RandomInstanceSpec(config.n, config.d, 1.0 / config.c)
                pts = gaussian_instance(spec, rng)
                qs, _ = planted_queries(pts, config.queries, spec.query_distance, rng)
            else:
                pts, qs = data, queries
            cached: tuple[tuple, Index] | None = None
            for value in values:
                cfg = _config_for(config, axis, value)
                plan = plan_for(cfg, len(pts))
                structure = (plan.k, plan.width, plan.tables, plan.variant, plan.replication)
                if cached is None or cached[0] != structure:
                    cached = (structure, build_index(pts, plan, seed))
                index = cached[1]
                timings: list[float] = []
                reps = run_queries(index, qs, seed, mode=cfg.mode, probe_budget=plan.probe_budget, timings=timings)
                row = {
                    "axis": axis,
                    "value": value,
                    "variant": plan.variant,
                    "seed": seed,
                    "n": len(pts),
                    "d": pts.shape[1],
                    "c": plan.c,
                    "r": plan.r,
                    "D": plan.D,
                    "k": plan.k,
                    "L": plan.tables,
                    "probe_budget": plan.probe_budget,
                    "replication": plan.replication,
                    "recall": recall(reps),
                    "mean_probes": float(np.mean([r.probes_used for r in reps])),
                    "mean_far": float(np.mean([r.far_points_scanned for r in reps])),
                    "mean_query_ms": 1000 * float(np.mean(timings)),
                    "index_entries": index.total_entries,
                    "entries_per_point": index.total_entries / (len(pts) * index.L),
                    "raw_entries_per_point": sum(t.raw_entries for t in index.tables) / (len(pts) * index.L),
                    "nn_found": "" if truth is None else nn_found_rate(reps, truth),
                }
                result.rows.append(row)
                if writer is not None:
                    writer.writerow(row)
                    fh.flush()
    finally:
        if fh is not None:
            fh.close()
    return result


def load_experiment(data_path: str | Path) -> tuple[np.ndarray, np.ndarray, list[dict], dict]:
    paths = sidecar_paths(data_path)
    meta = json.loads(paths["meta"].read_text()) if paths["meta"].exists() else {}
    truth = read_truth(paths["truth"]) if paths["truth"].exists() else []
    return read_dataset(data_path), read_dataset(paths["queries"]), truth, meta


def report_rows(reports: Sequence[QueryReport], timings: Sequence[float] | None = None) -> list[dict]:
    rows = []
    for i, rep in enumerate(reports):
        row = asdict(rep)
        if timings is not None:
            row["query_ms"] = 1000 * timings[i]
        rows.append(row)
    return rows


def far_budget_ok(rep: QueryReport, plan: SearchPlan) -> bool:
    return rep.max_table_far <= plan.far_cap and rep.max_table_probes <= max(plan.probe_budget, 1)


def log2_ceil(n: int) -> int:
    return max(1, math.ceil(math.log2(n)))
