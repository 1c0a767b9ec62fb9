"""Geometric sampling: spheres, Gaussian instances, planted queries, radius grids.

Also holds the on-disk dataset format::

    u64 magic ("ELSHDSET"), u64 version, u64 n, u64 d, then n*d float64 rows

with every field little-endian.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATASET_MAGIC = int.from_bytes(b"ELSHDSET", "little")
DATASET_VERSION = 1
_HEADER = struct.Struct("<4Q")


class DatasetFormatError(ValueError):
    pass


def _check_point(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size == 0:
        raise ValueError("a point must be a non-empty 1-D vector")
    if not np.all(np.isfinite(q)):
        raise ValueError("point coordinates must be finite")
    return q


def unit_vectors(m: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` independent uniform directions on the unit sphere in R^d."""
    z = rng.standard_normal((m, d))
    norms = np.linalg.norm(z, axis=1)
    bad = norms == 0
    while np.any(bad):  # practically unreachable, but a zero draw has no direction
        z[bad] = rng.standard_normal((int(bad.sum()), d))
        norms[bad] = np.linalg.norm(z[bad], axis=1)
        bad = norms == 0
    return z / norms[:, None]


def sphere_point(q: np.ndarray, r: float, rng: np.random.Generator) -> np.ndarray:
    """A uniform random point at distance exactly ``r`` from ``q``."""
    return sphere_points(q, r, 1, rng)[0]


def sphere_points(q: np.ndarray, r: float, m: int, rng: np.random.Generator) -> np.ndarray:
    q = _check_point(q)
    if not r > 0:
        raise ValueError("r must be positive")
    return q + r * unit_vectors(m, q.size, rng)


class SphereProjector:
    """Samples ``A @ u`` for ``u`` uniform on the unit sphere without drawing ``u``.

    ``A`` is a ``k x d`` matrix of projection directions.  Writing ``A.T = Q R``
    with orthonormal ``Q``, a standard normal ``z`` splits into ``y = Q.T z``
    (k i.i.d. normals) and an independent remainder whose squared norm is
    chi-square with ``d - k`` degrees of freedom, so
    ``A u = R.T y / sqrt(|y|^2 + chi2)`` has exactly the right law at O(k^2)
    cost per sample.  When ``d <= k`` it falls back to explicit directions.
    """

    def __init__(self, directions: np.ndarray):
        self.directions = np.asarray(directions, dtype=np.float64)
        k, d = self.directions.shape
        self.k, self.d = k, d
        if d > k:
            _, r = np.linalg.qr(self.directions.T)
            self._r = r
        else:
            self._r = None

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if self._r is None:
            return unit_vectors(m, self.d, rng) @ self.directions.T
        y = rng.standard_normal((m, self.k))
        rest = rng.chisquare(self.d - self.k, size=m)
        norm = np.sqrt(np.einsum("ij,ij->i", y, y) + rest)
        return (y @ self._r) / norm[:, None]


@dataclass(frozen=True)
class RandomInstanceSpec:
    """Gaussian instance: points ~ N^d(0, 1/sqrt 2), so pairwise distances are ~1."""

    n: int
    d: int
    query_distance: float = 0.5
    point_scale: float | None = None  # per-coordinate deviation; default 1/sqrt(2d)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.d < 1:
            raise ValueError("d must be at least 1")
        if not self.query_distance > 0:
            raise ValueError("query_distance must be positive")

    @property
    def coordinate_scale(self) -> float:
        return self.point_scale if self.point_scale is not None else 1.0 / math.sqrt(2 * self.d)


def gaussian_instance(spec: RandomInstanceSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((spec.n, spec.d)) * spec.coordinate_scale


def planted_query(p: np.ndarray, dist: float, rng: np.random.Generator) -> np.ndarray:
    """``p`` plus a N^d(0, dist) offset; the query ends up ~``dist`` from ``p``."""
    p = _check_point(p)
    if dist < 0:
        raise ValueError("dist must be non-negative")
    return p + rng.standard_normal(p.size) * (dist / math.sqrt(p.size))


def planted_queries(
    points: np.ndarray, count: int, dist: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Pick ``count`` distinct anchors and plant one query near each."""
    n, d = points.shape
    anchors = rng.choice(n, size=count, replace=count > n)
    noise = rng.standard_normal((count, d)) * (dist / math.sqrt(d))
    return points[anchors] + noise, anchors


def distance_grid(r_min: float, r_max: float, epsilon: float) -> list[float]:
    """Geometric grid ``r_min (1+eps)^j`` whose last entry is >= ``r_max``."""
    if not r_min > 0:
        raise ValueError("r_min must be positive")
    if r_max < r_min:
        raise ValueError("r_max must be at least r_min")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    steps = math.ceil(math.log(r_max / r_min) / math.log1p(epsilon) - 1e-12)
    grid = [r_min * (1 + epsilon) ** j for j in range(max(steps, 0) + 1)]
    if grid[-1] < r_max:  # guard against rounding in the step count
        grid.append(grid[-1] * (1 + epsilon))
    return grid


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------


def write_dataset(path: str | Path, points: np.ndarray) -> None:
    pts = np.ascontiguousarray(points, dtype="<f8")
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array")
    n, d = pts.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, d))
        fh.write(pts.tobytes())


def read_dataset(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, n, d = _HEADER.unpack_from(data)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: not a dataset file")
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 8 * n * d
    if len(data) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(n, d).astype(np.float64)


def read_csv_points(path: str | Path) -> np.ndarray:
    """Rows of comma-separated floats; a non-numeric first row is taken as a header."""
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                if i == 0:
                    continue
                raise
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    if len({len(r) for r in rows}) != 1:
        raise DatasetFormatError(f"{path}: ragged rows")
    return np.asarray(rows, dtype=np.float64)
