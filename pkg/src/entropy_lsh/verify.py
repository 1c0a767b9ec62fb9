"""Acceptance checks, grouped into the ``math``, ``hash`` and ``endtoend`` suites.

Each criterion returns one or more :class:`CheckResult` rows carrying the
measured value, the expectation, and whether the runtime stayed in budget.
Monte Carlo comparisons use the tolerance
``3 * sqrt(se_a**2 + se_b**2) + binning allowance`` where the binning
allowance is the change in the binned estimate when the bin count is halved,
divided by three (the leading-order bias of the finer binning).
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from . import index_store
from .bench import build_index, query_rng, run_queries
from .index_store import attach_fingerprints, build_expanded, fingerprints, new_sketch, sign_disagreement_rate
from .lsh_family import CompositeHash
from .math_kernel import (
    PlannerInput,
    alpha_constant,
    bit_entropy_rate,
    entropy_bits,
    expanded_plan,
    far_collision_prob,
    interval_hash_entropy,
    make_plan,
    rho,
    unit_collision_prob,
    verify_guessing_bound,
)
from .query_engine import QueryReport, entropy_probe_search, expanded_search
from .sampling import RandomInstanceSpec, gaussian_instance, planted_queries, unit_vectors


@dataclass(frozen=True)
class CheckResult:
    criterion: str
    name: str
    measured: str
    expected: str
    passed: bool
    seconds: float = 0.0
    limit: float | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        budget = f" limit={self.limit:g}s" if self.limit is not None else ""
        return (f"[{status}] {self.criterion} {self.name}: measured={self.measured} "
                f"expected={self.expected} time={self.seconds:.2f}s{budget}")


def _timed(criterion: str, name: str, limit: float | None, fn: Callable[[], tuple[str, str, bool]]) -> CheckResult:
    t0 = time.perf_counter()
    measured, expected, ok = fn()
    dt = time.perf_counter() - t0
    in_time = limit is None or dt <= limit
    return CheckResult(criterion, name, measured, expected, ok and in_time, dt, limit)


# ---------------------------------------------------------------------------
# Monte Carlo estimators
# ---------------------------------------------------------------------------


def binned_conditional_entropy(labels: np.ndarray, bins: np.ndarray, nbins: int) -> tuple[float, float]:
    """Plug-in ``H(label | bin)`` in bits with the Miller-Madow correction.

    The standard error is the delta-method one, ``std(-log2 p(label|bin)) / sqrt(N)``.
    """
    labels = np.asarray(labels)
    lab = np.unique(labels, return_inverse=True)[1]
    n = lab.size
    counts = np.zeros((nbins, lab.max() + 1))
    np.add.at(counts, (bins, lab), 1)
    totals = counts.sum(axis=1, keepdims=True)
    cond = counts / np.maximum(totals, 1)
    self_info = -np.log2(cond[bins, lab])
    nonzero = (counts > 0).sum(axis=1)
    occupied = totals[:, 0] > 0
    correction = (nonzero[occupied] - 1).sum() / (2 * n * math.log(2))
    return float(self_info.mean() + correction), float(self_info.std(ddof=1) / math.sqrt(n))


def _uniform_bins(values: np.ndarray, lo: float, hi: float, nbins: int) -> np.ndarray:
    return np.clip(((values - lo) / (hi - lo) * nbins).astype(np.int64), 0, nbins - 1)


def _quantile_bins(values: np.ndarray, nbins: int) -> np.ndarray:
    edges = np.quantile(values, np.linspace(0, 1, nbins + 1)[1:-1])
    return np.searchsorted(edges, values, side="right")


def _binned_with_allowance(labels, binner, nbins) -> tuple[float, float, float]:
    fine, se = binned_conditional_entropy(labels, binner(nbins), nbins)
    coarse, _ = binned_conditional_entropy(labels, binner(nbins // 2), nbins // 2)
    return fine, se, abs(coarse - fine) / 3


def fresh_hashes(count: int, d: int, width: float, rng: np.random.Generator) -> CompositeHash:
    """``count`` independent interval hashes, evaluated side by side."""
    return CompositeHash(rng.standard_normal((count, d)), rng.uniform(0.0, width, count), width)


def mc_collision_frequency(D: float, trials: int, rng: np.random.Generator, *, d: int = 4, pairs: int = 10) -> float:
    """Fraction of fresh interval hashes under which two unit-distance points collide."""
    hits = 0
    per = trials // pairs
    for j in range(pairs):
        m = per if j < pairs - 1 else trials - per * (pairs - 1)
        p = rng.standard_normal(d)
        q = p + unit_vectors(1, d, rng)[0]
        H = fresh_hashes(m, d, D, rng)
        keys = H.keys(np.stack([p, q]))
        hits += int(np.count_nonzero(keys[0] == keys[1]))
    return hits / trials


def mc_interval_entropy(c: float, D: float, samples: int, rng: np.random.Generator, *, nbins: int = 200,
                        d: int = 3, pairs: int = 10) -> tuple[float, float, float]:
    """Binned estimate of ``I(h(p) - h(q) | r(q))`` for ``|p - q| = 1/c``."""
    labels, residues = [], []
    per = samples // pairs
    for j in range(pairs):
        m = per if j < pairs - 1 else samples - per * (pairs - 1)
        q = rng.standard_normal(d)
        p = q + unit_vectors(1, d, rng)[0] / c
        H = fresh_hashes(m, d, D, rng)
        keys = H.keys(np.stack([p, q]))
        labels.append(keys[0] - keys[1])
        residues.append(np.mod(H.projected(q[None, :])[0] + H.shifts, D))
    labels, residues = np.concatenate(labels), np.concatenate(residues)
    return _binned_with_allowance(labels, lambda b: _uniform_bins(residues, 0.0, D, b), nbins)


def mc_symmetry(c: float, samples: int, rng: np.random.Generator, *, d: int = 32, nbins: int = 100,
                chunk: int = 100_000):
    """Binned ``I(h(p)|f(q))`` and ``I(h(q)|f(p))`` on the Gaussian instance with sign hashes."""
    fp, fq = [], []
    for start in range(0, samples, chunk):
        m = min(chunk, samples - start)
        p = rng.standard_normal((m, d)) / math.sqrt(2 * d)
        q = p + rng.standard_normal((m, d)) / (c * math.sqrt(d))
        v = rng.standard_normal((m, d))
        fp.append(np.einsum("ij,ij->i", v, p))
        fq.append(np.einsum("ij,ij->i", v, q))
    fp, fq = np.concatenate(fp), np.concatenate(fq)
    hp, hq = (fp >= 0).astype(np.int8), (fq >= 0).astype(np.int8)
    pq = _binned_with_allowance(hp, lambda b: _quantile_bins(fq, b), nbins)
    qp = _binned_with_allowance(hq, lambda b: _quantile_bins(fp, b), nbins)
    return pq, qp


def _mc_agree(a: tuple[float, float, float], b: tuple[float, float, float]) -> tuple[float, bool]:
    tol = 3 * math.hypot(a[1], b[1]) + a[2] + b[2]
    return tol, abs(a[0] - b[0]) <= tol


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def criterion_1() -> list[CheckResult]:
    def run():
        a = alpha_constant(1e-4)
        return f"{a.value:.6f}+-{a.abs_error:.1e}", "[1.301, 1.305]", 1.301 <= a.value <= 1.305

    return [_timed("C1", "alpha constant", 1.0, run)]


def criterion_2(trials: int = 1_000_000, seed: int = 2) -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(seed)
    for D in (1.0, 2.0, 3.0, 5.0):
        def run(D=D):
            g = far_collision_prob(D)
            freq = mc_collision_frequency(D, trials, rng)
            se = math.sqrt(g * (1 - g) / trials)
            exact = unit_collision_prob(D)
            return f"{freq:.6f} (exact rate {exact:.6f})", f"{g:.6f}+-{3 * se:.5f}", abs(freq - g) <= 3 * se

        out.append(_timed("C2", f"far collision g(D={D:g}) vs Monte Carlo", 30.0 / 4, run))
    return out


def collision_g3_check(trials: int = 1_000_000, seed: int = 23) -> list[CheckResult]:
    """The looser absolute check on g(3): Monte Carlo within 0.005 of the closed form."""

    def run():
        g = far_collision_prob(3.0)
        freq = mc_collision_frequency(3.0, trials, np.random.default_rng(seed))
        return f"{freq:.6f}", f"{g:.6f}+-0.005", abs(freq - g) <= 0.005

    return [_timed("hash-g3", "far collision g(3) vs Monte Carlo, absolute 0.005", 10.0, run)]


def criterion_3(samples: int = 1_000_000, seed: int = 3) -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(seed)
    for c in (2.0, 4.0, 10.0):
        for D in (2.0, 3.0):
            def run(c=c, D=D):
                est = interval_hash_entropy(c, D)
                mc = mc_interval_entropy(c, D, samples, rng)
                tol, ok = _mc_agree(mc, (est.value, 0.0, est.abs_error))
                return f"{mc[0]:.5f}", f"{est.value:.5f}+-{tol:.5f}", ok

            out.append(_timed("C3", f"interval entropy M(c={c:g}, D={D:g}) vs Monte Carlo", 120.0 / 6, run))
    return out


def criterion_4() -> list[CheckResult]:
    def run():
        a = alpha_constant().value
        limit = 2 * a / math.sqrt(math.pi)
        at10 = bit_entropy_rate(10.0).value * 10
        ratios = [bit_entropy_rate(c).value * c / limit for c in (5.0, 10.0, 50.0)]
        increasing = all(b > a_ for a_, b in zip(ratios, ratios[1:]))
        ok = 1.44 <= at10 <= 1.50 and increasing and ratios[-1] <= 1 and 1 - ratios[-1] < 0.01
        measured = f"rate(10)*10={at10:.5f} ratios={[round(x, 5) for x in ratios]}"
        return measured, "rate(10)*10 in [1.44, 1.50]; ratios increasing to 1", ok

    return [_timed("C4", "sign-bit entropy rate", 10.0, run)]


def criterion_5() -> list[CheckResult]:
    def run_a():
        v = rho(2.0, 3.0)
        return f"{v:.5f}", "[0.60, 0.78]", 0.60 <= v <= 0.78

    def run_b():
        v = rho(100.0, 3.0) * 100
        return f"{v:.5f}", "[1.9, 2.2]", 1.9 <= v <= 2.2

    return [_timed("C5a", "rho(2, 3)", 5.0, run_a), _timed("C5b", "100 * rho(100, 3)", 5.0, run_b)]


def criterion_6(samples: int = 1_000_000, seed: int = 6) -> list[CheckResult]:
    def run():
        pq, qp = mc_symmetry(4.0, samples, np.random.default_rng(seed))
        tol, ok = _mc_agree(pq, qp)
        return f"I(h(p)|f(q))={pq[0]:.5f} I(h(q)|f(p))={qp[0]:.5f}", f"|diff| <= {tol:.5f}", ok

    return [_timed("C6", "entropy symmetry on the Gaussian instance", 60.0, run)]


def guessing_distributions() -> dict[str, np.ndarray]:
    uniform = np.full(64, 1 / 64)
    geometric = 0.97 ** np.arange(1000)
    geometric /= geometric.sum()
    tail = 2**14
    remark = np.concatenate([[0.5], np.full(tail, 0.5 / tail)])
    return {"uniform64": uniform, "geometric": geometric, "half_plus_tail": remark}


def criterion_7(trials: int = 20_000, seed: int = 7) -> list[CheckResult]:
    def run():
        parts, ok = [], True
        for i, (name, w) in enumerate(guessing_distributions().items()):
            info = entropy_bits(w)
            freq = verify_guessing_bound(w, trials, seed + i)
            need = 1 / (4 * info)
            if name == "uniform64":
                need = max(need, 1 - math.exp(-4) - 0.02)
            ok &= freq >= need
            parts.append(f"{name}: I={info:.2f} hit={freq:.4f} need>={need:.4f}")
        return "; ".join(parts), "hit >= 1/(4I); uniform >= 1-e^-4-0.02", ok

    return [_timed("C7", "guessing bound", 30.0, run)]


# --- end to end ---------------------------------------------------------------

NEAR_LINEAR_RUN = dict(n=10_000, d=1024, c=2.0, D=3.0, queries=100, seeds=(0, 1, 2, 3, 4))
EXPANDED_RUN = dict(n=1000, d=256, c=4.0, D=3.0, queries=100, seeds=(0, 1))


@dataclass
class Run:
    plan: object
    reports: list
    index_entries: list
    queries: np.ndarray
    points: np.ndarray


def near_linear_budget(n: int, c: float, D: float) -> int:
    return math.ceil(math.ceil(n ** rho(c, D)) * math.log2(n))


@lru_cache(maxsize=1)
def near_linear_runs() -> tuple[Run, ...]:
    cfg = NEAR_LINEAR_RUN
    n, c = cfg["n"], cfg["c"]
    L = math.ceil(math.log2(n))
    plan = make_plan(PlannerInput(n=n, c=c, r=1 / c, D=cfg["D"], tables=L,
                                  probe_budget=near_linear_budget(n, c, cfg["D"])))
    runs = []
    for seed in cfg["seeds"]:
        rng = np.random.default_rng(seed)
        pts = gaussian_instance(RandomInstanceSpec(n, cfg["d"], 1 / c), rng)
        qs, _ = planted_queries(pts, cfg["queries"], 1 / c, rng)
        index = build_index(pts, plan, seed)
        runs.append(Run(index.plan, run_queries(index, qs, seed), [t.n_entries for t in index.tables], qs, pts))
    return tuple(runs)


@lru_cache(maxsize=1)
def expanded_runs() -> tuple[Run, ...]:
    cfg = EXPANDED_RUN
    n, c = cfg["n"], cfg["c"]
    L = math.ceil(math.log2(n))
    plan = expanded_plan(PlannerInput(n=n, c=c, r=1 / c, D=cfg["D"], tables=L))
    runs = []
    for seed in cfg["seeds"]:
        rng = np.random.default_rng(seed)
        pts = gaussian_instance(RandomInstanceSpec(n, cfg["d"], 1 / c), rng)
        qs, _ = planted_queries(pts, cfg["queries"], 1 / c, rng)
        index = build_index(pts, plan, seed)
        runs.append(Run(index.plan, run_queries(index, qs, seed), [t.n_entries for t in index.tables], qs, pts))
    return tuple(runs)


def criterion_8() -> list[CheckResult]:
    def run():
        runs = near_linear_runs()
        reps = [r for run in runs for r in run.reports]
        plan = runs[0].plan
        rec = sum(r.success for r in reps) / len(reps)
        far_per_table = [r.far_points_scanned / max(r.tables_searched, 1) for r in reps]
        mean_far = float(np.mean(far_per_table))
        ok = rec >= 0.9 and mean_far <= plan.probe_budget
        measured = f"recall={rec:.3f} mean_far_per_table={mean_far:.1f} k={plan.k} L={plan.tables}"
        return measured, f"recall>=0.9, mean far <= budget {plan.probe_budget}", ok

    return [_timed("C8", "near-linear entropy-probe search (n=1e4, d=1024, c=2)", 600.0, run)]


def criterion_9() -> list[CheckResult]:
    def run():
        runs = expanded_runs()
        reps = [r for run in runs for r in run.reports]
        plan = runs[0].plan
        rec = sum(r.success for r in reps) / len(reps)
        scans_ok = all(r.points_scanned <= 3 * r.tables_searched and r.max_table_far <= 3 for r in reps)
        target = plan.n * plan.replication
        entries = [e for run in runs for e in run.index_entries]
        entries_ok = all(target / 20 <= e <= target for e in entries)
        ok = rec >= 0.9 and scans_ok and entries_ok
        measured = (f"recall={rec:.3f} k={plan.k} T'={plan.replication} L={plan.tables} "
                    f"entries/table in [{min(entries)}, {max(entries)}]")
        return measured, f"recall>=0.9, scans<=3/bucket, entries in [{target // 20}, {target}]", ok

    return [_timed("C9", "expanded single-probe search (n=1000, c=4)", 300.0, run)]


def soundness_violations(run: Run) -> list[str]:
    plan = run.plan
    bad = []
    thr = plan.c * plan.r
    for rep in run.reports:
        if rep.success:
            dist = float(np.linalg.norm(run.points[rep.found_id] - run.queries[rep.query_id]))
            if not dist <= thr or abs(dist - rep.found_distance) > 1e-9:
                bad.append(f"q{rep.query_id}: distance {dist}")
        if plan.variant == "expanded":
            if rep.max_table_far > 3 or rep.points_scanned > 3 * rep.tables_searched:
                bad.append(f"q{rep.query_id}: bucket scan cap")
        elif rep.max_table_probes > plan.probe_budget or rep.max_table_far > plan.far_cap:
            bad.append(f"q{rep.query_id}: budget")
        if rep.far_points_scanned > rep.points_scanned:
            bad.append(f"q{rep.query_id}: far > scanned")
    return bad


def criterion_10() -> list[CheckResult]:
    def run():
        runs = near_linear_runs() + expanded_runs()
        bad = [v for run in runs for v in soundness_violations(run)]
        total = sum(len(run.reports) for run in runs)
        return f"{len(bad)} violations over {total} queries", "0 violations", not bad

    return [_timed("C10", "soundness and budget invariants", None, run)]


def criterion_11(seed: int = 11, pairs: int = 1000) -> list[CheckResult]:
    def run():
        n, c, d = 10_000, 4.0, 256
        rng = np.random.default_rng(seed)
        pts = gaussian_instance(RandomInstanceSpec(n, d, 1 / c), rng)
        b = index_store.fingerprint_width(n)
        sketch = new_sketch(b, d, rng)
        anchors = rng.choice(n, size=pairs, replace=False)
        noise = rng.standard_normal((pairs, d)) / (c * math.sqrt(d))
        near_q = pts[anchors] + noise
        others = (anchors + 1 + rng.integers(0, n - 1, pairs)) % n
        fa, fn, fo = fingerprints(pts[anchors], sketch), fingerprints(near_q, sketch), fingerprints(pts[others], sketch)
        near_ham = np.count_nonzero(fa != fn, axis=1)
        far_ham = np.count_nonzero(fa != fo, axis=1)
        half = 1 / math.sqrt(2)
        near_rate = sign_disagreement_rate(half, math.sqrt(0.5 + 1 / c**2), 1 / c)
        far_rate = sign_disagreement_rate(half, half, 1.0)
        thr = b * (near_rate + far_rate) / 2
        errors = int(np.count_nonzero(near_ham > thr) + np.count_nonzero(far_ham <= thr))
        rate = errors / (2 * pairs)
        measured = (f"b={b} threshold={thr:.2f} misclassified={rate:.4f} "
                    f"(near mean {near_ham.mean() / b:.3f}, far mean {far_ham.mean() / b:.3f})")
        return measured, "<= 0.05", rate <= 0.05

    return [_timed("C11", "fingerprint near/far separation", 60.0, run)]


def criterion_12(seed: int = 12) -> list[CheckResult]:
    def run():
        rng = np.random.default_rng(seed)
        n, d, c = 1000, 128, 2.0
        pts = gaussian_instance(RandomInstanceSpec(n, d, 1 / c), rng)
        qs, _ = planted_queries(pts, 30, 1 / c, rng)
        plan = make_plan(PlannerInput(n=n, c=c, r=1 / c, tables=4))
        near = build_index(pts, plan, seed)
        first = run_queries(near, qs, seed)
        again = run_queries(near, qs, seed)
        rebuilt = run_queries(build_index(pts, plan, seed), qs, seed)
        checks = {"repeat": first == again, "rebuild": first == rebuilt}

        eplan = expanded_plan(PlannerInput(n=300, c=4.0, r=0.25, tables=3))
        small = gaussian_instance(RandomInstanceSpec(300, 64, 0.25), rng)
        sq, _ = planted_queries(small, 20, 0.25, rng)
        expanded = build_expanded(small, eplan, None, np.random.default_rng(seed))
        fp_only = attach_fingerprints(near, np.random.default_rng(seed), threshold=8, drop_points=True)
        with tempfile.TemporaryDirectory() as tmp:
            for name, idx, queries in (("near", near, qs), ("expanded", expanded, sq), ("fingerprint", fp_only, qs)):
                path = Path(tmp) / f"{name}.elsh"
                index_store.save(idx, path)
                loaded = index_store.load(path)
                same_buckets = all(
                    np.array_equal(a.digests, b.digests) and np.array_equal(a.ids, b.ids)
                    and np.array_equal(a.offsets, b.offsets)
                    for a, b in zip(idx.tables, loaded.tables)
                )
                same_reports = run_queries(idx, queries, seed) == run_queries(loaded, queries, seed)
                checks[f"{name} round-trip"] = same_buckets and same_reports
        failed = [k for k, v in checks.items() if not v]
        return f"failed={failed}", "all identical", not failed

    return [_timed("C12", "determinism and save/load round-trip", None, run)]


SUITES: dict[str, tuple[Callable[[], list[CheckResult]], ...]] = {
    "math": (criterion_1, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7),
    "hash": (criterion_2, collision_g3_check, criterion_11),
    "endtoend": (criterion_8, criterion_9, criterion_10, criterion_12),
}


def run_suite(name: str, echo: Callable[[str], None] | None = print) -> list[CheckResult]:
    names = list(SUITES) if name == "all" else [name]
    results = []
    for suite in names:
        for criterion in SUITES[suite]:
            for res in criterion():
                results.append(res)
                if echo is not None:
                    echo(res.line())
    return results
