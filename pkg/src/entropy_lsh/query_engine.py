"""Search algorithms over the indices in :mod:`index_store`.

``entropy_probe_search`` hashes random points drawn on the sphere of radius
``r`` around the query and scans the buckets they land in.  Each table gets
its own child generator and probes are drawn in fixed-size chunks, so a run
with a larger budget replays a smaller run's probe sequence as a prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .index_store import Index
from .lsh_family import key_digests
from .sampling import SphereProjector, unit_vectors

PROBE_CHUNK = 512
MODES = ("decision", "optimize")


@dataclass(frozen=True)
class QueryReport:
    query_id: int
    found_id: int | None
    found_distance: float | None
    probes_used: int  # summed over tables
    points_scanned: int
    far_points_scanned: int  # summed over tables
    success: bool
    tables_searched: int = 0
    max_table_probes: int = 0
    max_table_far: int = 0
    radius: float | None = None


def brute_force_nn(points, q) -> tuple[int, float]:
    """Exact nearest neighbour by linear scan; ties go to the lowest id."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("brute force needs a non-empty (n, d) array")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (pts.shape[1],):
        raise ValueError("dimension mismatch")
    dist = np.linalg.norm(pts - q, axis=1)
    i = int(np.argmin(dist))
    return i, float(dist[i])


class _Scanner:
    """Candidate evaluation and bookkeeping shared by the search routines."""

    def __init__(self, index: Index, q: np.ndarray, threshold: float, prefilter: int | None):
        self.index = index
        self.q = q
        self.threshold = threshold
        self.prefilter = prefilter
        self.q_fp = None
        if index.points is None or prefilter is not None:
            if index.fingerprints is None:
                raise ValueError("index has neither points nor fingerprints")
            self.q_fp = index.sketch.keys(q[None, :])[0].astype(np.uint8)
        if index.points is None and index.hamming_threshold is None:
            raise ValueError("fingerprint-only index without a Hamming threshold")
        self.best_id: int | None = None
        self.best_dist = math.inf
        self.scanned = 0
        self.far = 0

    def evaluate(self, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Surviving ids, their distances (NaN when unknown) and the near mask."""
        idx = self.index
        if self.prefilter is not None and idx.points is not None:
            ham = np.count_nonzero(idx.fingerprints[ids] != self.q_fp, axis=1)
            ids = ids[ham <= self.prefilter]
        if idx.points is None:
            ham = np.count_nonzero(idx.fingerprints[ids] != self.q_fp, axis=1)
            return ids, np.full(len(ids), np.nan), ham <= idx.hamming_threshold
        dist = np.linalg.norm(idx.points[ids] - self.q, axis=1)
        return ids, dist, dist <= self.threshold

    def note(self, ids: np.ndarray, dist: np.ndarray, near: np.ndarray) -> None:
        if not len(ids):
            return
        if self.index.points is None:
            if near.any() and self.best_id is None:
                self.best_id = int(ids[np.argmax(near)])
            return
        j = int(np.argmin(dist))
        if dist[j] < self.best_dist or (dist[j] == self.best_dist and ids[j] < self.best_id):
            self.best_dist = float(dist[j])
            self.best_id = int(ids[j])

    def scan(self, ids: np.ndarray, table_far: int, far_cap: int, decision: bool) -> tuple[int, bool, bool]:
        """Scan one bucket in id order.

        Returns ``(far points seen, success, cap hit)``; scanning stops before a
        far point that would push the table over ``far_cap``.
        """
        ids, dist, near = self.evaluate(ids)
        if decision and near.any():
            j0 = int(np.argmax(near))
            if table_far + j0 > far_cap:
                allowed = far_cap - table_far
                self.scanned += allowed
                self.far += allowed
                return allowed, False, True
            self.scanned += j0 + 1
            self.far += j0
            self.best_id = int(ids[j0])
            self.best_dist = float(dist[j0])
            return j0, True, False
        far_mask = ~near
        cum = np.cumsum(far_mask)
        capped = table_far + (int(cum[-1]) if len(cum) else 0) > far_cap
        if capped:
            stop = int(np.searchsorted(cum, far_cap - table_far + 1))  # first excess far point
            ids, dist, near, far_mask = ids[:stop], dist[:stop], near[:stop], far_mask[:stop]
        n_far = int(far_mask.sum())
        self.scanned += len(ids)
        self.far += n_far
        self.note(ids, dist, near)
        return n_far, False, capped

    def report(self, query_id: int, probes: int, tables: int, max_probes: int, max_far: int, radius: float) -> QueryReport:
        if self.index.points is None:
            found = self.best_id
            return QueryReport(query_id, found, None, probes, self.scanned, self.far, found is not None,
                               tables, max_probes, max_far, radius)
        ok = self.best_id is not None and self.best_dist <= self.threshold
        return QueryReport(
            query_id,
            self.best_id,
            None if self.best_id is None else self.best_dist,
            probes,
            self.scanned,
            self.far,
            ok,
            tables,
            max_probes,
            max_far,
            radius,
        )


def _check_query(index: Index, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.d,):
        raise ValueError(f"dimension mismatch: index has d={index.d}, query has shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("query coordinates must be finite")
    return q


def entropy_probe_search(
    index: Index,
    q,
    r: float | None = None,
    c: float | None = None,
    rng: np.random.Generator | None = None,
    *,
    query_id: int = 0,
    mode: str = "decision",
    probe_budget: int | None = None,
    far_cap: int | None = None,
    sampler: str = "projected",
    prefilter: int | None = None,
) -> QueryReport:
    """Search a near-linear index by hashing random points on the sphere B(q, r).

    In decision mode the first point within ``c*r`` ends the search; in
    optimisation mode every table spends its full budget and the nearest
    scanned point is returned.  A table is abandoned once it has scanned
    ``far_cap`` points farther than ``c*r``.  A zero probe budget probes only
    the query's own bucket in each table.
    """
    if index.variant != "near_linear":
        raise ValueError("entropy-probe search needs a near-linear index")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if sampler not in ("projected", "full"):
        raise ValueError(f"unknown sampler {sampler!r}")
    q = _check_query(index, q)
    plan = index.plan
    r = plan.r if r is None else r
    c = plan.c if c is None else c
    if not r > 0:
        raise ValueError("r must be positive")
    budget = plan.probe_budget if probe_budget is None else probe_budget
    cap = plan.far_cap if far_cap is None else far_cap
    rng = rng if rng is not None else np.random.default_rng(query_id)
    decision = mode == "decision"

    scanner = _Scanner(index, q, c * r, prefilter)
    probes = tables = max_probes = max_far = 0
    for table, trng in zip(index.tables, rng.spawn(index.L)):
        tables += 1
        H = table.hash
        base = H.projected(q[None, :])[0]
        table_probes = table_far = 0
        seen: set[int] = set()
        done = False
        if budget == 0:
            chunks = [H.keys_from_projected(base[None, :])]
        else:
            chunks = None
        while not done and (chunks is not None or table_probes < budget):
            if chunks is not None:
                if not chunks:
                    break
                keys = chunks.pop()
            else:
                m = min(PROBE_CHUNK, budget - table_probes)
                if sampler == "projected":
                    offsets = table.projector.sample(PROBE_CHUNK, trng)[:m]
                else:
                    offsets = (unit_vectors(PROBE_CHUNK, index.d, trng) @ H.directions.T)[:m]
                keys = H.keys_from_projected(base + r * offsets)
            digests = key_digests(keys)
            positions = table.locate(digests)
            consumed = len(digests)
            for j in np.flatnonzero(positions >= 0):
                dg = int(digests[j])
                if dg in seen:
                    continue
                seen.add(dg)
                n_far, hit, capped = scanner.scan(table.bucket(positions[j]), table_far, cap, decision)
                table_far += n_far
                if hit or capped:
                    consumed = int(j) + 1
                    done = True
                    break
            table_probes += consumed
            if done:
                break
        probes += table_probes
        max_probes = max(max_probes, table_probes)
        max_far = max(max_far, table_far)
        if decision and scanner.best_id is not None and (index.points is None or scanner.best_dist <= c * r):
            break
    return scanner.report(query_id, probes, tables, max_probes, max_far, r)


def expanded_search(index: Index, q, *, query_id: int = 0, c: float | None = None, r: float | None = None) -> QueryReport:
    """Probe the query's own bucket in each table of an expanded index.

    At most ``bucket_scan_cap`` (3) candidates are scanned per bucket; the
    first one within ``c*r`` is returned.
    """
    if index.variant != "expanded":
        raise ValueError("single-probe search needs an expanded index")
    q = _check_query(index, q)
    plan = index.plan
    r = plan.r if r is None else r
    c = plan.c if c is None else c
    scan_cap = plan.bucket_scan_cap or 3
    scanner = _Scanner(index, q, c * r, None)
    tables = max_far = 0
    for table in index.tables:
        tables += 1
        pos = table.locate(key_digests(table.hash.keys(q[None, :])))[0]
        if pos < 0:
            continue
        ids = table.bucket(pos)[:scan_cap]
        n_far, hit, _ = scanner.scan(ids, 0, scan_cap, decision=True)
        max_far = max(max_far, n_far)
        if hit:
            break
    return scanner.report(query_id, tables, tables, 1, max_far, r)


def search_unknown_radius(
    index: Index | Sequence[Index],
    q,
    c: float,
    grid: Sequence[float],
    rng: np.random.Generator,
    *,
    query_id: int = 0,
    probe_budget: int | None = None,
) -> QueryReport:
    """Run the decision search at each grid radius in ascending order.

    ``index`` is either one index probed at every radius or a sequence of
    indices, one per grid radius.  Counters accumulate over the rungs tried.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("grid must be non-empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly ascending")
    family = list(index) if isinstance(index, (list, tuple)) else [index] * len(grid)
    if len(family) != len(grid):
        raise ValueError("need one index per grid radius")
    probes = scanned = far = tables = max_probes = max_far = 0
    last = None
    for idx, radius, child in zip(family, grid, rng.spawn(len(grid))):
        rep = entropy_probe_search(idx, q, radius, c, child, query_id=query_id, probe_budget=probe_budget)
        probes += rep.probes_used
        scanned += rep.points_scanned
        far += rep.far_points_scanned
        tables += rep.tables_searched
        max_probes = max(max_probes, rep.max_table_probes)
        max_far = max(max_far, rep.max_table_far)
        last = rep
        if rep.success:
            break
    return QueryReport(
        query_id,
        last.found_id,
        last.found_distance,
        probes,
        scanned,
        far,
        last.success,
        tables,
        max_probes,
        max_far,
        last.radius,
    )
