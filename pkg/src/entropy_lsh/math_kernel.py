"""Entropy integrals, Gaussian tails and the search-parameter planner.

Every entropy in this module is measured in bits, so a quantity ``M`` of
per-projection entropy translates directly into ``2**(k*M)`` guesses.

Distances are normalised the usual way for the ``(r, c*r)`` problem: the far
distance ``c*r`` is the unit, the near distance is ``1/c`` of it, and the
interval width ``D`` is expressed in that unit.  A planner turns these
dimensionless quantities into concrete widths by multiplying by ``c*r``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Any, Sequence

import numpy as np
from scipy import integrate, special

from .sampling import distance_grid

LOG2E = 1.0 / math.log(2.0)

# Cut-off beyond which the binary-entropy tail integrand is below 1e-16.
TAIL_CUT = 9.0
QUAD_LIMIT = 400
DEFAULT_D = 3.0
DEFAULT_TOLERANCE = 1e-9


class QuadratureError(RuntimeError):
    """Raised when an integral cannot be resolved to the requested tolerance."""


class PlanError(ValueError):
    """Raised for infeasible or degenerate search plans."""


@dataclass(frozen=True)
class EntropyEstimate:
    value: float  # bits
    abs_error: float  # bits

    def __post_init__(self) -> None:
        if self.value < 0 or self.abs_error < 0:
            raise ValueError(f"invalid entropy estimate {self!r}")

    def __float__(self) -> float:
        return self.value


# ---------------------------------------------------------------------------
# Elementary functions
# ---------------------------------------------------------------------------


def entropy_bits(weights: Sequence[float] | np.ndarray) -> float:
    """Shannon entropy in bits of a discrete distribution, with 0*log 0 = 0."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValueError("empty distribution")
    if np.any(w < 0) or np.any(w > 1) or not np.all(np.isfinite(w)):
        raise ValueError("weights must lie in [0, 1]")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {w.sum()!r}, not 1")
    nz = w[w > 0]
    return float(max(0.0, -(nz * np.log2(nz)).sum()))


def phi(x):
    """Upper tail of the standard normal, ``(1 - erf(x/sqrt 2))/2``."""
    out = 0.5 * special.erfc(np.asarray(x, dtype=np.float64) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def _plogp(w):
    """The single-outcome term ``-w log2 w`` (vectorised, 0 at w <= 0)."""
    w = np.asarray(w, dtype=np.float64)
    safe = np.where(w > 0, w, 1.0)
    return np.where(w > 0, -w * np.log2(safe), 0.0)


def _tail_entropy(x):
    """``I(Phi(x), 1 - Phi(x))`` computed from both tails, accurate for large |x|."""
    return _plogp(phi(x)) + _plogp(phi(-np.asarray(x, dtype=np.float64)))


def _quad(f, a: float, b: float, tol: float, points: Sequence[float] = ()) -> tuple[float, float]:
    if b <= a:
        return 0.0, 0.0
    pts = [p for p in points if a < p < b] or None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, err = integrate.quad(f, a, b, epsabs=tol, epsrel=0.0, limit=QUAD_LIMIT, points=pts)
    if not math.isfinite(value) or err > tol:
        raise QuadratureError(f"quadrature on [{a}, {b}] reached error {err:.3g} > {tol:.3g}")
    return float(value), float(err)


def _tail_bound(x: float) -> float:
    # integrand ~ x**2 exp(-x**2/2); its tail integral beyond x is below 2 f(x)/x
    return 2.0 * float(_tail_entropy(x)) / x


# ---------------------------------------------------------------------------
# The constants and integrals
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def alpha_constant(tolerance: float = DEFAULT_TOLERANCE) -> EntropyEstimate:
    """Integral over [0, inf) of the binary entropy of the normal tail (~1.303 bits)."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    value, err = _quad(_tail_entropy, 0.0, TAIL_CUT, tolerance / 2, points=(1.0, 3.0))
    return EntropyEstimate(value, err + _tail_bound(TAIL_CUT))


@lru_cache(maxsize=None)
def bit_entropy_rate(c: float, tolerance: float = DEFAULT_TOLERANCE) -> EntropyEstimate:
    """Entropy of one sign bit of a near neighbour given the query's projection.

    Evaluates ``2/(c sqrt(pi)) * int_0^inf exp(-(x/c)^2) I(Phi(x), 1-Phi(x)) dx``
    for the Gaussian random instance (points of norm ~1/sqrt 2, neighbour at
    distance 1/c).  For large ``c`` this tends to ``2 alpha / (c sqrt(pi))``.
    """
    if not c > 1:
        raise ValueError("c must exceed 1")
    scale = 2.0 / (c * math.sqrt(math.pi))
    value, err = _quad(
        lambda x: math.exp(-((x / c) ** 2)) * _tail_entropy(x),
        0.0,
        TAIL_CUT,
        tolerance / (2 * scale),
        points=(1.0, 3.0),
    )
    return EntropyEstimate(scale * value, scale * (err + _tail_bound(TAIL_CUT)))


def _interval_term(i: int, cd: float, tol: float) -> tuple[float, float]:
    """Integral (before the 1/(cD) factor) of the i-th offset term, i >= 1."""
    lo = (i - 1) * cd
    f = lambda x: float(_plogp(phi(x + lo) - phi(x + lo + cd)))  # noqa: E731
    if i == 1:
        upper = min(cd, TAIL_CUT)
        value, err = _quad(f, 0.0, upper, tol, points=(1.0, 3.0))
        if upper < cd:
            err += _tail_bound(upper)
        return value, err
    return _quad(f, 0.0, cd, tol)


@lru_cache(maxsize=None)
def interval_hash_entropy(c: float, D: float = DEFAULT_D, tolerance: float = DEFAULT_TOLERANCE) -> EntropyEstimate:
    """Per-projection entropy ``M`` of the interval hash of a near neighbour.

    ``M = I(h(p) - h(q) | r(q))`` where ``p`` is at distance ``1/c`` from ``q``,
    ``r(q)`` is the position of ``q`` inside its width-``D`` interval and the
    offset ``h(p) - h(q)`` ranges over the integers.  The offsets 0 and +-1
    are always integrated; higher offsets are added while their bound
    ``-P log P`` with ``P <= Phi((|i|-1) c D)`` still exceeds the tolerance.
    """
    if not c > 1:
        raise ValueError("c must exceed 1")
    if not D > 0:
        raise ValueError("D must be positive")
    cd = c * D
    tol = tolerance / 8

    # offset 0: 2/(cD) * int_0^{cD/2} I(1 - Phi(x) - Phi(cD - x)) dx
    upper = min(cd / 2, TAIL_CUT)
    m0, e0 = _quad(
        lambda x: float(_plogp(1.0 - phi(x) - phi(cd - x))), 0.0, upper, tol * cd / 2, points=(1.0, 3.0)
    )
    if upper < cd / 2:
        e0 += (cd / 2 - upper) * 2 * phi(upper) * LOG2E
    total = 2.0 / cd * m0
    err = 2.0 / cd * e0

    i = 1
    while True:
        if i >= 2:
            p_max = phi((i - 1) * cd)
            bound = float(_plogp(min(p_max, 1 / math.e)))
            if 2 * bound < tol:
                # remaining terms shrink faster than geometrically
                err += 4 * bound
                break
        mi, ei = _interval_term(i, cd, tol * cd)
        total += 2.0 * mi / cd  # offsets +i and -i contribute equally
        err += 2.0 * ei / cd
        i += 1
    return EntropyEstimate(max(total, 0.0), err)


def far_collision_prob(D: float) -> float:
    """Closed-form bound ``g`` on the collision rate of one interval hash at unit distance.

    Counts a separation with probability ``x/D`` for projection gaps
    ``x < D`` only, so it overstates the true rate by ``2*Phi(D)`` (the mass
    of gaps beyond ``D``, which always separate).  See
    :func:`unit_collision_prob` for the exact rate.
    """
    if not D > 0:
        raise ValueError("D must be positive")
    return 1.0 - math.sqrt(2.0 / math.pi) * (-math.expm1(-D * D / 2)) / D


def unit_collision_prob(D: float) -> float:
    """Exact probability that one interval hash maps two points at unit distance together."""
    return far_collision_prob(D) - 2.0 * float(phi(D))


def _rho_raw(c: float, D: float) -> float:
    return interval_hash_entropy(c, D).value / math.log2(1.0 / far_collision_prob(D))


def rho(c: float, D: float = DEFAULT_D) -> float:
    """Query exponent ``M / log2(1/g)``, clamped to at most 1."""
    return min(1.0, _rho_raw(c, D))


# ---------------------------------------------------------------------------
# Planner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlannerInput:
    n: int
    c: float
    r: float = 1.0
    D: float = DEFAULT_D
    epsilon_grid: float = 0.1
    tables: int = 1
    # knobs standing in for the unspecified polylog factors
    probe_multiplier: float = 1.0
    probe_budget: int | None = None
    far_factor: float = 2.0
    r_max: float | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not self.c > 1:
            raise ValueError("c must exceed 1")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not self.D > 0:
            raise ValueError("D must be positive")
        if not 0 < self.epsilon_grid < 1:
            raise ValueError("epsilon_grid must lie in (0, 1)")
        if self.tables < 1:
            raise ValueError("tables must be at least 1")
        if self.probe_multiplier < 0:
            raise ValueError("probe_multiplier must be non-negative")
        if self.probe_budget is not None and self.probe_budget < 0:
            raise ValueError("probe_budget must be non-negative")
        if self.r_max is not None and self.r_max < self.r:
            raise ValueError("r_max must be at least r")


@dataclass(frozen=True)
class SearchPlan:
    """Derived parameters of an index and its search procedure.

    ``width`` is the concrete interval width ``D * c * r``.  ``probe_budget``
    and ``far_cap`` are per table.  Expanded plans additionally carry the
    replication count (``T'``) and the per-bucket scan cap.
    """

    n: int
    c: float
    r: float
    D: float
    width: float
    k: int
    g: float
    M: float
    rho: float
    probe_budget: int
    far_cap: int
    tables: int = 1
    distance_grid: tuple[float, ...] = field(default_factory=tuple)
    variant: str = "near_linear"
    replication: int = 1
    bucket_scan_cap: int | None = None
    epsilon: float | None = None

    @property
    def near_radius(self) -> float:
        return self.r

    @property
    def far_radius(self) -> float:
        return self.c * self.r

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["distance_grid"] = list(self.distance_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SearchPlan":
        d = dict(d)
        d["distance_grid"] = tuple(d.get("distance_grid", ()))
        return cls(**d)


def _log2n(n: int) -> float:
    return math.log2(n) if n > 1 else 0.0


def make_plan(inp: PlannerInput) -> SearchPlan:
    """Plan a near-linear index: ``k = ceil(log n / log(1/g))`` and ``2^(kM(1+1/log n))`` probes."""
    g = far_collision_prob(inp.D)
    lg = math.log2(1.0 / g)
    M = interval_hash_entropy(inp.c, inp.D).value
    rho_raw = M / lg
    if rho_raw >= 1:
        raise PlanError(f"rho = {rho_raw:.4f} >= 1: a linear scan is at least as fast")
    logn = _log2n(inp.n)
    if inp.n == 1:
        k, base = 1, 1
    else:
        k = max(1, math.ceil(logn / lg))
        base = min(inp.n, math.ceil(2.0 ** (k * M * (1 + 1 / logn))))
    if inp.probe_budget is not None:
        budget = inp.probe_budget
    else:
        budget = math.ceil(inp.probe_multiplier * base)
    return SearchPlan(
        n=inp.n,
        c=inp.c,
        r=inp.r,
        D=inp.D,
        width=inp.D * inp.c * inp.r,
        k=k,
        g=g,
        M=M,
        rho=min(1.0, rho_raw),
        probe_budget=budget,
        far_cap=max(1, math.ceil(inp.far_factor * max(budget, 1))),
        tables=inp.tables,
        distance_grid=tuple(distance_grid(inp.r, inp.r_max or inp.r, inp.epsilon_grid)),
    )


def default_expansion_epsilon(rho_value: float, n: int) -> float:
    """``(1 - rho)^2 / log n``, which keeps the expanded table at ``n^(1/(1-rho))``."""
    return (1 - rho_value) ** 2 / max(_log2n(n), 1.0)


def expanded_plan(inp: PlannerInput, epsilon: float | None = None) -> SearchPlan:
    """Plan the expanded index that answers a query with one probe per table.

    Raises:
        PlanError: if ``rho * (1 + epsilon) >= 1``, i.e. no finite ``k`` exists.
    """
    g = far_collision_prob(inp.D)
    lg = math.log2(1.0 / g)
    M = interval_hash_entropy(inp.c, inp.D).value
    rho_raw = M / lg
    if epsilon is None:
        epsilon = default_expansion_epsilon(min(rho_raw, 1.0), inp.n)
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    denom = lg - M * (1 + epsilon)
    if denom <= 0:
        raise PlanError(f"expanded index infeasible: rho*(1+eps) = {rho_raw * (1 + epsilon):.4f} >= 1")
    k = max(1, math.ceil(_log2n(inp.n) / denom))
    replication = math.ceil(2.0 ** (k * M * (1 + epsilon)))
    return SearchPlan(
        n=inp.n,
        c=inp.c,
        r=inp.r,
        D=inp.D,
        width=inp.D * inp.c * inp.r,
        k=k,
        g=g,
        M=M,
        rho=min(1.0, rho_raw),
        probe_budget=1,
        far_cap=3,
        tables=inp.tables,
        distance_grid=tuple(distance_grid(inp.r, inp.r_max or inp.r, inp.epsilon_grid)),
        variant="expanded",
        replication=replication,
        bucket_scan_cap=3,
        epsilon=epsilon,
    )


# ---------------------------------------------------------------------------
# Guessing a random value
# ---------------------------------------------------------------------------


def guessing_sample_count(entropy: float) -> int:
    return math.ceil(4 * (2.0**entropy + 1))


def verify_guessing_bound(weights: Sequence[float] | np.ndarray, trials: int, rng_seed: int) -> float:
    """Fraction of trials in which ``4(2^I + 1)`` fresh draws include a hidden draw.

    ``I`` is the entropy of ``weights``.  Each trial draws the hidden value and
    the guesses independently from the same distribution.
    """
    w = np.asarray(weights, dtype=np.float64)
    info = entropy_bits(w)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    s = guessing_sample_count(info)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    last = len(w) - 1
    rng = np.random.default_rng(rng_seed)

    def draw(shape):
        return np.minimum(np.searchsorted(cdf, rng.random(shape), side="right"), last)

    hits = 0
    chunk = max(1, min(trials, 4_000_000 // s))
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        target = draw(m)
        guesses = draw((m, s))
        hits += int(np.count_nonzero((guesses == target[:, None]).any(axis=1)))
        done += m
    return hits / trials
