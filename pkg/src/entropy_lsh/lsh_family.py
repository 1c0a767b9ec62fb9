"""Gaussian projection hashes for Euclidean space.

An interval hash maps ``p`` to ``floor((v.p + shift) / width)`` where ``v`` has
i.i.d. standard normal coordinates and ``shift`` is uniform on ``[0, width)``.
The sign hash keeps only whether ``v.p >= 0``.  ``k`` of them side by side form
a composite key; keys are stored in tables through a 64-bit digest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Literal

import numpy as np

Mode = Literal["interval", "sign"]
_MODES = ("interval", "sign")

_U64 = struct.Struct("<Q")
_PROJ_HEAD = struct.Struct("<Qdd")


def _as_point(p, d: int) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (d,):
        raise ValueError(f"dimension mismatch: expected ({d},), got {p.shape}")
    return p


@dataclass(frozen=True, eq=False)
class ProjectionHash:
    direction: np.ndarray
    shift: float
    width: float

    def __post_init__(self) -> None:
        if not self.width > 0:
            raise ValueError("width must be positive")
        if not 0 <= self.shift < self.width:
            raise ValueError("shift must lie in [0, width)")
        self.direction.setflags(write=False)

    @property
    def d(self) -> int:
        return self.direction.size


def new_projection(d: int, D: float, rng: np.random.Generator) -> ProjectionHash:
    if d < 1:
        raise ValueError("d must be at least 1")
    if not D > 0:
        raise ValueError("D must be positive")
    direction = rng.standard_normal(d)
    shift = float(rng.uniform(0.0, D))
    return ProjectionHash(direction, shift, float(D))


def project(h: ProjectionHash, p) -> float:
    return float(h.direction @ _as_point(p, h.d))


def interval_bucket(h: ProjectionHash, p) -> int:
    return int(np.floor((project(h, p) + h.shift) / h.width))


def sign_bit(h: ProjectionHash, p) -> int:
    """1 when the projection is >= 0, else 0; the shift plays no part."""
    return int(project(h, p) >= 0.0)


@dataclass(frozen=True, eq=False)
class CompositeHash:
    """``k`` projections sharing one width, stored as stacked arrays."""

    directions: np.ndarray  # (k, d)
    shifts: np.ndarray  # (k,)
    width: float
    mode: Mode = "interval"

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.directions.ndim != 2 or self.directions.shape[0] < 1:
            raise ValueError("need at least one projection")
        if self.shifts.shape != (self.directions.shape[0],):
            raise ValueError("one shift per projection")
        self.directions.setflags(write=False)
        self.shifts.setflags(write=False)

    @property
    def k(self) -> int:
        return self.directions.shape[0]

    @property
    def d(self) -> int:
        return self.directions.shape[1]

    @property
    def projections(self) -> list[ProjectionHash]:
        return [ProjectionHash(self.directions[i], float(self.shifts[i]), self.width) for i in range(self.k)]

    @classmethod
    def from_projections(cls, projections: list[ProjectionHash], mode: Mode = "interval") -> "CompositeHash":
        widths = {h.width for h in projections}
        if len(widths) != 1:
            raise ValueError("projections must share a width")
        dims = {h.d for h in projections}
        if len(dims) != 1:
            raise ValueError("projections must share a dimension")
        return cls(
            np.stack([h.direction for h in projections]),
            np.array([h.shift for h in projections]),
            widths.pop(),
            mode,
        )

    def projected(self, points: np.ndarray) -> np.ndarray:
        """Raw projections ``v_i . p`` for a batch of points, shape (m, k)."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.d:
            raise ValueError(f"dimension mismatch: expected (m, {self.d}), got {pts.shape}")
        return pts @ self.directions.T

    def keys_from_projected(self, values: np.ndarray) -> np.ndarray:
        if self.mode == "sign":
            return (values >= 0.0).astype(np.int64)
        return np.floor((values + self.shifts) / self.width).astype(np.int64)

    def keys(self, points: np.ndarray) -> np.ndarray:
        return self.keys_from_projected(self.projected(points))


def new_composite_hash(k: int, d: int, width: float, rng: np.random.Generator, mode: Mode = "interval") -> CompositeHash:
    if k < 1:
        raise ValueError("k must be at least 1")
    return CompositeHash.from_projections([new_projection(d, width, rng) for _ in range(k)], mode)


def composite_key(H: CompositeHash, p) -> tuple[int, ...]:
    p = _as_point(p, H.d)
    return tuple(int(x) for x in H.keys(p[None, :])[0])


# ---------------------------------------------------------------------------
# Key digests
# ---------------------------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _salts(k: int) -> np.ndarray:
    # odd multipliers from a splitmix64 stream; fixed so digests are stable across runs
    seq = np.arange(1, k + 1, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    return _mix(seq) | np.uint64(1)


def key_digests(keys: np.ndarray) -> np.ndarray:
    """64-bit digests of composite keys, one per row.

    A salted linear combination of the coordinates (mod 2**64) followed by a
    splitmix finaliser.  Distinct keys merge with probability about 2**-64
    per pair, i.e. near n**2 / 2**65 for a table of n keys.
    """
    keys = np.ascontiguousarray(keys, dtype=np.int64)
    if keys.ndim == 1:
        keys = keys[None, :]
    k = keys.shape[1]
    h = keys.view(np.uint64) @ _salts(k)
    return _mix(h ^ np.uint64(k))


def key_digest(key) -> int:
    return int(key_digests(np.asarray(key, dtype=np.int64)[None, :])[0])


# ---------------------------------------------------------------------------
# Binary serialisation: per projection u64 d, f64 width, f64 shift, d x f64
# ---------------------------------------------------------------------------


def write_composite(fh: BinaryIO, H: CompositeHash) -> None:
    fh.write(_U64.pack(H.k))
    fh.write(_U64.pack(_MODES.index(H.mode)))
    for i in range(H.k):
        fh.write(_PROJ_HEAD.pack(H.d, H.width, float(H.shifts[i])))
        fh.write(np.ascontiguousarray(H.directions[i], dtype="<f8").tobytes())


def _read_exact(fh: BinaryIO, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise EOFError("truncated hash record")
    return data


def read_composite(fh: BinaryIO) -> CompositeHash:
    (k,) = _U64.unpack(_read_exact(fh, 8))
    (mode,) = _U64.unpack(_read_exact(fh, 8))
    if mode >= len(_MODES) or k < 1:
        raise ValueError("corrupt hash record")
    projections = []
    for _ in range(k):
        d, width, shift = _PROJ_HEAD.unpack(_read_exact(fh, _PROJ_HEAD.size))
        direction = np.frombuffer(_read_exact(fh, 8 * d), dtype="<f8").astype(np.float64)
        projections.append(ProjectionHash(direction, shift, width))
    return CompositeHash.from_projections(projections, _MODES[mode])
