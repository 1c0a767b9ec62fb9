"""Entropy-based locality-sensitive hashing for approximate nearest-neighbour search."""

from .index_store import Index, attach_fingerprints, build_expanded, build_near_linear, load, save
from .math_kernel import (
    PlannerInput,
    PlanError,
    SearchPlan,
    alpha_constant,
    bit_entropy_rate,
    expanded_plan,
    far_collision_prob,
    interval_hash_entropy,
    make_plan,
    rho,
    unit_collision_prob,
)
from .query_engine import QueryReport, brute_force_nn, entropy_probe_search, expanded_search, search_unknown_radius

__all__ = [
    "Index",
    "PlanError",
    "PlannerInput",
    "QueryReport",
    "SearchPlan",
    "alpha_constant",
    "attach_fingerprints",
    "bit_entropy_rate",
    "brute_force_nn",
    "build_expanded",
    "build_near_linear",
    "entropy_probe_search",
    "expanded_plan",
    "expanded_search",
    "far_collision_prob",
    "interval_hash_entropy",
    "load",
    "make_plan",
    "rho",
    "save",
    "search_unknown_radius",
    "unit_collision_prob",
]
