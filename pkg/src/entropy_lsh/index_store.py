"""Hash-table indices: near-linear, expanded, and compact fingerprints.

A table keeps only non-empty buckets.  Buckets are addressed by the 64-bit
digest of the composite key and laid out CSR-style: a sorted array of
distinct digests, an offsets array, and the concatenated point ids.

Binary index file (all integers u64 little-endian, floats f64)::

    b"ELSH", version, variant, n, d, k, L, D, flags, meta_len, meta (JSON)
    L composite hashes
    per table: n_buckets, n_ids, raw_entries, digests, counts, ids
    [points n*d]                              if flags & HAS_POINTS
    [b, sketch hash, packed fingerprint bits] if flags & HAS_FINGERPRINTS
    sha256 of everything above
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .lsh_family import (
    CompositeHash,
    composite_key,
    key_digest,
    key_digests,
    new_composite_hash,
    read_composite,
    write_composite,
)
from .math_kernel import SearchPlan
from .sampling import SphereProjector, sphere_points

MAGIC = b"ELSH"
VERSION = 1
VARIANTS = ("near_linear", "expanded")
HAS_POINTS = 1
HAS_FINGERPRINTS = 2
DEFAULT_MEMORY_CAP = 4 * 2**30  # bytes of projected (digest, id) entries
ENTRY_BYTES = 16
_HEAD = struct.Struct("<4s6QdQQ")
_U64 = struct.Struct("<Q")


class IndexBuildError(RuntimeError):
    pass


class IndexFormatError(ValueError):
    pass


@dataclass(eq=False)
class IndexTable:
    hash: CompositeHash
    digests: np.ndarray  # sorted, distinct uint64
    offsets: np.ndarray  # int64, len n_buckets + 1
    ids: np.ndarray  # int64
    raw_entries: int = 0  # entries generated before de-duplication
    _projector: SphereProjector | None = field(default=None, repr=False)

    @classmethod
    def from_pairs(cls, H: CompositeHash, digests: np.ndarray, ids: np.ndarray, dedup: bool = True) -> "IndexTable":
        digests = np.asarray(digests, dtype=np.uint64)
        ids = np.asarray(ids, dtype=np.int64)
        order = np.lexsort((ids, digests))
        digests, ids = digests[order], ids[order]
        raw = len(ids)
        if dedup and raw:
            keep = np.ones(raw, dtype=bool)
            keep[1:] = (digests[1:] != digests[:-1]) | (ids[1:] != ids[:-1])
            digests, ids = digests[keep], ids[keep]
        uniq, starts = np.unique(digests, return_index=True)
        offsets = np.append(starts, len(ids)).astype(np.int64)
        return cls(H, uniq, offsets, ids, raw)

    @property
    def n_buckets(self) -> int:
        return len(self.digests)

    @property
    def n_entries(self) -> int:
        return len(self.ids)

    @property
    def projector(self) -> SphereProjector:
        if self._projector is None:
            self._projector = SphereProjector(self.hash.directions)
        return self._projector

    def locate(self, digests: np.ndarray) -> np.ndarray:
        """Bucket position for each digest, -1 where the bucket is empty."""
        pos = np.searchsorted(self.digests, digests)
        ok = pos < len(self.digests)
        ok[ok] = self.digests[pos[ok]] == digests[ok]
        return np.where(ok, pos, -1)

    def bucket(self, position: int) -> np.ndarray:
        return self.ids[self.offsets[position] : self.offsets[position + 1]]

    def lookup_digest(self, digest: int) -> np.ndarray:
        pos = self.locate(np.array([digest], dtype=np.uint64))[0]
        return self.bucket(pos) if pos >= 0 else self.ids[:0]

    def bucket_sizes(self) -> np.ndarray:
        return np.diff(self.offsets)


@dataclass(frozen=True, eq=False)
class Fingerprint:
    bits: np.ndarray  # uint8 zeros and ones

    @property
    def width(self) -> int:
        return self.bits.size

    def hamming(self, other: "Fingerprint") -> int:
        if other.width != self.width:
            raise ValueError("fingerprint widths differ")
        return int(np.count_nonzero(self.bits != other.bits))


@dataclass(eq=False)
class Index:
    tables: list[IndexTable]
    plan: SearchPlan
    variant: str
    n: int
    d: int
    points: np.ndarray | None = None
    fingerprints: np.ndarray | None = None  # (n, b) uint8
    sketch: CompositeHash | None = None
    hamming_threshold: int | None = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.tables:
            raise ValueError("an index needs at least one table")
        ks = {t.hash.k for t in self.tables}
        if len(ks) != 1:
            raise ValueError("all tables must share k")

    @property
    def L(self) -> int:
        return len(self.tables)

    @property
    def total_entries(self) -> int:
        return sum(t.n_entries for t in self.tables)


def _check_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array (n, d); rows must share a dimension")
    if pts.shape[0] == 0:
        raise ValueError("cannot index an empty point set")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point coordinates must be finite")
    return pts


def build_near_linear(points, plan: SearchPlan, L: int | None, rng: np.random.Generator) -> Index:
    """Store every point once per table under its composite key."""
    pts = _check_points(points)
    L = plan.tables if L is None else L
    if L < 1 or plan.k < 1:
        raise ValueError("need L >= 1 and k >= 1")
    n, d = pts.shape
    ids = np.arange(n, dtype=np.int64)
    tables = []
    for _ in range(L):
        H = new_composite_hash(plan.k, d, plan.width, rng)
        tables.append(IndexTable.from_pairs(H, key_digests(H.keys(pts)), ids, dedup=False))
    return Index(tables, replace(plan, tables=L), "near_linear", n, d, points=pts)


def projected_entries(n: int, plan: SearchPlan, L: int) -> int:
    return n * plan.replication * L


def build_expanded(
    points,
    plan: SearchPlan,
    L: int | None,
    rng: np.random.Generator,
    *,
    memory_cap: int = DEFAULT_MEMORY_CAP,
    sampler: str = "projected",
    chunk_entries: int = 1 << 18,
) -> Index:
    """Store each point under the keys of ``T'`` random points at distance ``r`` from it.

    ``sampler="projected"`` draws the projections of the sphere points
    directly (exact in law, O(k^2) per draw); ``"full"`` materialises each
    sphere point in R^d.  Repeated keys of one point are stored once.
    """
    pts = _check_points(points)
    L = plan.tables if L is None else L
    if L < 1:
        raise ValueError("L must be at least 1")
    if sampler not in ("projected", "full"):
        raise ValueError(f"unknown sampler {sampler!r}")
    n, d = pts.shape
    reps = plan.replication
    if projected_entries(n, plan, L) * ENTRY_BYTES > memory_cap:
        raise IndexBuildError(
            f"expanded build needs {projected_entries(n, plan, L)} entries, over the {memory_cap}-byte cap"
        )
    per_chunk = max(1, chunk_entries // reps)
    tables = []
    for _ in range(L):
        H = new_composite_hash(plan.k, d, plan.width, rng)
        projector = SphereProjector(H.directions)
        base = H.projected(pts)
        all_digests, all_ids = [], []
        for start in range(0, n, per_chunk):
            stop = min(n, start + per_chunk)
            m = stop - start
            if sampler == "projected":
                offsets = plan.r * projector.sample(m * reps, rng)
                values = np.repeat(base[start:stop], reps, axis=0) + offsets
            else:
                v = np.concatenate([sphere_points(pts[i], plan.r, reps, rng) for i in range(start, stop)])
                values = H.projected(v)
            all_digests.append(key_digests(H.keys_from_projected(values)))
            all_ids.append(np.repeat(np.arange(start, stop, dtype=np.int64), reps))
        table = IndexTable.from_pairs(H, np.concatenate(all_digests), np.concatenate(all_ids), dedup=True)
        table._projector = projector
        tables.append(table)
    return Index(tables, replace(plan, tables=L), "expanded", n, d, points=pts)


# ---------------------------------------------------------------------------
# Fingerprints
# ---------------------------------------------------------------------------


def fingerprint_width(n: int) -> int:
    """``ceil(2 log2 n)`` bits, at least one."""
    return max(1, math.ceil(2 * math.log2(n))) if n > 1 else 1


def new_sketch(b: int, d: int, rng: np.random.Generator) -> CompositeHash:
    return new_composite_hash(b, d, 1.0, rng, mode="sign")


def fingerprint(p, sketch: CompositeHash) -> Fingerprint:
    if sketch.mode != "sign":
        raise ValueError("fingerprints need a sign-mode sketch")
    return Fingerprint(np.asarray(composite_key(sketch, p), dtype=np.uint8))


def fingerprints(points, sketch: CompositeHash) -> np.ndarray:
    if sketch.mode != "sign":
        raise ValueError("fingerprints need a sign-mode sketch")
    return sketch.keys(np.asarray(points, dtype=np.float64)).astype(np.uint8)


def sign_disagreement_rate(norm_p: float, norm_q: float, dist: float) -> float:
    """Probability that a random hyperplane through the origin separates p and q."""
    cos = (norm_p**2 + norm_q**2 - dist**2) / (2 * norm_p * norm_q)
    return math.acos(max(-1.0, min(1.0, cos))) / math.pi


def attach_fingerprints(
    index: Index,
    rng: np.random.Generator,
    *,
    bits: int | None = None,
    threshold: int | None = None,
    drop_points: bool = False,
) -> Index:
    """Return a copy of ``index`` carrying b-bit sign fingerprints of its points.

    ``threshold`` is the Hamming distance up to which a candidate counts as near;
    it is required when the raw points are dropped.
    """
    if index.points is None:
        raise ValueError("index has no points to fingerprint")
    b = bits or fingerprint_width(index.n)
    sketch = new_sketch(b, index.d, rng)
    if drop_points and threshold is None:
        raise ValueError("a fingerprint-only index needs a Hamming threshold")
    return replace(
        index,
        fingerprints=fingerprints(index.points, sketch),
        sketch=sketch,
        hamming_threshold=threshold,
        points=None if drop_points else index.points,
    )


# ---------------------------------------------------------------------------
# Lookup
# ---------------------------------------------------------------------------


def bucket_lookup(index: Index, table_id: int, key) -> list[int]:
    if not 0 <= table_id < index.L:
        raise IndexError(f"table {table_id} out of range for {index.L} tables")
    return index.tables[table_id].lookup_digest(key_digest(key)).tolist()


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _write_array(buf: io.BytesIO, arr: np.ndarray, dtype: str) -> None:
    buf.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def save(index: Index, path: str | Path) -> None:
    flags = (HAS_POINTS if index.points is not None else 0) | (HAS_FINGERPRINTS if index.fingerprints is not None else 0)
    meta = json.dumps({"plan": index.plan.to_dict(), "hamming_threshold": index.hamming_threshold}).encode()
    buf = io.BytesIO()
    buf.write(
        _HEAD.pack(
            MAGIC,
            VERSION,
            VARIANTS.index(index.variant),
            index.n,
            index.d,
            index.tables[0].hash.k,
            index.L,
            index.plan.D,
            flags,
            len(meta),
        )
    )
    buf.write(meta)
    for t in index.tables:
        write_composite(buf, t.hash)
    for t in index.tables:
        buf.write(struct.pack("<3Q", t.n_buckets, t.n_entries, t.raw_entries))
        _write_array(buf, t.digests, "<u8")
        _write_array(buf, t.bucket_sizes(), "<u8")
        _write_array(buf, t.ids, "<u8")
    if index.points is not None:
        _write_array(buf, index.points, "<f8")
    if index.fingerprints is not None:
        buf.write(_U64.pack(index.fingerprints.shape[1]))
        write_composite(buf, index.sketch)
        _write_array(buf, np.packbits(index.fingerprints, axis=1), "u1")
    body = buf.getvalue()
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def _take(fh: io.BytesIO, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise IndexFormatError("truncated index file")
    return data


def load(path: str | Path) -> Index:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size + 32:
        raise IndexFormatError(f"{path}: truncated index file")
    magic, version, variant, n, d, k, L, D, flags, meta_len = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise IndexFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise IndexFormatError(f"{path}: unsupported version {version}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IndexFormatError(f"{path}: checksum mismatch (corrupt or truncated)")
    if variant >= len(VARIANTS):
        raise IndexFormatError(f"{path}: unknown variant {variant}")
    fh = io.BytesIO(body)
    fh.seek(_HEAD.size)
    try:
        meta = json.loads(_take(fh, meta_len))
        hashes = [read_composite(fh) for _ in range(L)]
        tables = []
        for H in hashes:
            nb, ni, raw = struct.unpack("<3Q", _take(fh, 24))
            digests = np.frombuffer(_take(fh, 8 * nb), dtype="<u8").astype(np.uint64)
            counts = np.frombuffer(_take(fh, 8 * nb), dtype="<u8").astype(np.int64)
            ids = np.frombuffer(_take(fh, 8 * ni), dtype="<u8").astype(np.int64)
            offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
            if offsets[-1] != ni or H.k != k:
                raise IndexFormatError(f"{path}: inconsistent table")
            tables.append(IndexTable(H, digests, offsets, ids, raw))
        points = None
        if flags & HAS_POINTS:
            points = np.frombuffer(_take(fh, 8 * n * d), dtype="<f8").reshape(n, d).astype(np.float64)
        fps, sketch = None, None
        if flags & HAS_FINGERPRINTS:
            (b,) = _U64.unpack(_take(fh, 8))
            sketch = read_composite(fh)
            packed = np.frombuffer(_take(fh, n * ((b + 7) // 8)), dtype=np.uint8).reshape(n, -1)
            fps = np.unpackbits(packed, axis=1, count=b)
    except (EOFError, ValueError, KeyError) as exc:
        if isinstance(exc, IndexFormatError):
            raise
        raise IndexFormatError(f"{path}: {exc}") from exc
    return Index(
        tables,
        SearchPlan.from_dict(meta["plan"]),
        VARIANTS[variant],
        n,
        d,
        points=points,
        fingerprints=fps,
        sketch=sketch,
        hamming_threshold=meta.get("hamming_threshold"),
    )
