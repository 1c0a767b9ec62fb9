from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entropy_lsh.index_store import attach_fingerprints, build_expanded, build_near_linear
from entropy_lsh.lsh_family import key_digests
from entropy_lsh.math_kernel import PlannerInput, expanded_plan, make_plan
from entropy_lsh.query_engine import (
    brute_force_nn,
    entropy_probe_search,
    expanded_search,
    search_unknown_radius,
)
from entropy_lsh.sampling import RandomInstanceSpec, distance_grid, gaussian_instance, planted_queries


def instance(n, d, c, seed, queries=20):
    rng = np.random.default_rng(seed)
    pts = gaussian_instance(RandomInstanceSpec(n, d, 1 / c), rng)
    qs, anchors = planted_queries(pts, queries, 1 / c, rng)
    return pts, qs, anchors


@pytest.fixture(scope="module")
def near_setup():
    pts, qs, anchors = instance(2000, 128, 2.0, 0, queries=40)
    plan = make_plan(PlannerInput(n=2000, c=2.0, r=0.5, tables=4, probe_budget=400))
    index = build_near_linear(pts, plan, None, np.random.default_rng(1))
    return pts, qs, anchors, index


def check_sound(index, q, rep, budget=None, cap=None):
    plan = index.plan
    if rep.success:
        dist = np.linalg.norm(index.points[rep.found_id] - q)
        assert dist <= plan.c * (rep.radius or plan.r) + 1e-12
        assert dist == pytest.approx(rep.found_distance, abs=1e-12)
    assert rep.far_points_scanned <= rep.points_scanned
    # a zero budget still probes the query's own bucket
    assert rep.max_table_probes <= max(plan.probe_budget if budget is None else budget, 1)
    assert rep.max_table_far <= (plan.far_cap if cap is None else cap)


class TestBruteForce:
    def test_basics(self, rng):
        pts = rng.standard_normal((50, 4))
        assert brute_force_nn(pts[:1], pts[0] + 1) == (0, pytest.approx(2.0))
        assert brute_force_nn(pts, pts[13]) == (13, 0.0)

    def test_ties_lowest_id(self):
        pts = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        assert brute_force_nn(pts, np.zeros(2))[0] == 0

    def test_errors(self):
        with pytest.raises(ValueError):
            brute_force_nn(np.zeros((0, 3)), np.zeros(3))
        with pytest.raises(ValueError):
            brute_force_nn(np.zeros((2, 3)), np.zeros(2))


class TestEntropyProbeSearch:
    def test_planted_recall(self, near_setup):
        pts, qs, _, index = near_setup
        reps = [entropy_probe_search(index, q, rng=np.random.default_rng([5, i]), query_id=i)
                for i, q in enumerate(qs)]
        assert np.mean([r.success for r in reps]) >= 0.9
        for q, rep in zip(qs, reps):
            check_sound(index, q, rep)
            if rep.success:
                assert rep.found_distance >= brute_force_nn(pts, q)[1]

    def test_self_query(self):
        wins = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            pts = gaussian_instance(RandomInstanceSpec(100, 64), rng)
            index = build_near_linear(pts, make_plan(PlannerInput(n=100, c=2.0, r=0.5)), 1, rng)
            rep = entropy_probe_search(index, pts[seed % 100], rng=rng)
            wins += rep.success
        assert wins >= 90

    def test_no_neighbour_spends_budget(self, rng):
        pts = gaussian_instance(RandomInstanceSpec(500, 32), rng)
        index = build_near_linear(pts, make_plan(PlannerInput(n=500, c=2.0, r=0.5, probe_budget=64)), 1, rng)
        rep = entropy_probe_search(index, np.full(32, 50.0), rng=rng)
        assert rep.found_id is None and not rep.success
        assert rep.probes_used == 64 and rep.points_scanned == 0

    def test_deterministic(self, near_setup):
        _, qs, _, index = near_setup
        for mode in ("decision", "optimize"):
            a = entropy_probe_search(index, qs[3], rng=np.random.default_rng(9), mode=mode)
            b = entropy_probe_search(index, qs[3], rng=np.random.default_rng(9), mode=mode)
            assert a == b

    def test_monotone_in_budget(self, near_setup):
        _, qs, _, index = near_setup
        for i, q in enumerate(qs):
            prev = False
            for budget in (1, 2, 4, 8, 16, 32, 64, 128):
                rep = entropy_probe_search(index, q, rng=np.random.default_rng([7, i]), probe_budget=budget)
                assert rep.success or not prev
                prev = rep.success

    def test_zero_budget_probes_own_bucket(self, near_setup):
        pts, qs, anchors, index = near_setup
        for i, q in enumerate(qs):
            rep = entropy_probe_search(index, q, rng=np.random.default_rng(i), probe_budget=0)
            own = []
            for t in index.tables:
                pos = t.locate(key_digests(t.hash.keys(q[None, :])))[0]
                own.extend(t.bucket(pos).tolist() if pos >= 0 else [])
            near = [j for j in own if np.linalg.norm(pts[j] - q) <= 1.0]
            assert rep.success == bool(near)
            assert rep.max_table_probes <= 1

    def test_optimize_returns_nearest_scanned(self, near_setup):
        pts, qs, _, index = near_setup
        for i, q in enumerate(qs[:10]):
            dec = entropy_probe_search(index, q, rng=np.random.default_rng(i))
            opt = entropy_probe_search(index, q, rng=np.random.default_rng(i), mode="optimize")
            assert opt.probes_used >= dec.probes_used
            if dec.success:
                assert opt.found_distance <= dec.found_distance
            if opt.success:
                assert opt.found_distance >= brute_force_nn(pts, q)[1]

    @given(st.integers(0, 10_000), st.integers(0, 5))
    def test_far_cap_respected(self, near_setup, seed, cap):
        _, qs, _, index = near_setup
        q = qs[seed % len(qs)]
        rep = entropy_probe_search(index, q, rng=np.random.default_rng(seed), far_cap=cap, mode="optimize")
        check_sound(index, q, rep, cap=cap)

    def test_far_points_never_end_search(self, rng):
        # a single far point shares every bucket; the search must not report it
        pts = np.array([[0.0, 0.0], [3.0, 0.0]])
        plan = make_plan(PlannerInput(n=2, c=2.0, r=0.5, probe_budget=20))
        index = build_near_linear(pts[1:], replace(plan, n=1), 2, rng)
        rep = entropy_probe_search(index, pts[0], rng=rng)
        assert not rep.success
        assert rep.points_scanned == rep.far_points_scanned

    def test_full_sampler(self, near_setup):
        _, qs, _, index = near_setup
        reps = [entropy_probe_search(index, q, rng=np.random.default_rng(i), sampler="full") for i, q in enumerate(qs)]
        assert np.mean([r.success for r in reps]) >= 0.8

    def test_fingerprint_paths(self, near_setup):
        pts, qs, _, index = near_setup
        fp = attach_fingerprints(index, np.random.default_rng(2), bits=64, threshold=20)
        only = attach_fingerprints(index, np.random.default_rng(2), bits=64, threshold=20, drop_points=True)
        hits = 0
        for i, q in enumerate(qs):
            a = entropy_probe_search(fp, q, rng=np.random.default_rng(i), prefilter=20)
            b = entropy_probe_search(only, q, rng=np.random.default_rng(i))
            check_sound(fp, q, a)
            hits += b.success
            if b.success:
                assert b.found_distance is None
        assert hits >= 0.8 * len(qs)

    def test_validation(self, near_setup):
        _, qs, _, index = near_setup
        with pytest.raises(ValueError):
            entropy_probe_search(index, qs[0][:5])
        with pytest.raises(ValueError):
            entropy_probe_search(index, qs[0], r=0.0)
        with pytest.raises(ValueError):
            entropy_probe_search(index, qs[0], mode="other")
        bad = qs[0].copy()
        bad[0] = np.nan
        with pytest.raises(ValueError):
            entropy_probe_search(index, bad)


@pytest.fixture(scope="module")
def setup():
    pts, qs, _ = instance(300, 64, 4.0, 3, queries=30)
    plan = expanded_plan(PlannerInput(n=300, c=4.0, r=0.25, tables=6))
    return pts, qs, build_expanded(pts, plan, None, np.random.default_rng(4))


class TestExpandedSearch:
    def test_recall_and_caps(self, setup):
        pts, qs, index = setup
        reps = [expanded_search(index, q, query_id=i) for i, q in enumerate(qs)]
        assert np.mean([r.success for r in reps]) >= 0.9
        for q, rep in zip(qs, reps):
            assert rep.max_table_far <= 3
            assert rep.points_scanned <= 3 * rep.tables_searched
            check_sound(index, q, rep)

    def test_matches_direct_lookup(self, setup):
        pts, qs, index = setup
        for q in qs:
            expected = None
            for t in index.tables:
                pos = t.locate(key_digests(t.hash.keys(q[None, :])))[0]
                if pos < 0:
                    continue
                near = [j for j in t.bucket(pos)[:3] if np.linalg.norm(pts[j] - q) <= 1.0]
                if near:
                    expected = near[0]
                    break
            rep = expanded_search(index, q)
            assert rep.success == (expected is not None)
            if expected is not None:
                assert rep.found_id == expected

    def test_variant_checks(self, setup, near_setup):
        with pytest.raises(ValueError):
            expanded_search(near_setup[3], near_setup[1][0])
        with pytest.raises(ValueError):
            entropy_probe_search(setup[2], setup[1][0])


class TestUnknownRadius:
    def test_single_rung_equals_direct(self, near_setup):
        _, qs, _, index = near_setup
        rng_a, rng_b = np.random.default_rng(3), np.random.default_rng(3)
        a = search_unknown_radius(index, qs[0], 2.0, [0.5], rng_a)
        b = entropy_probe_search(index, qs[0], 0.5, 2.0, rng_b.spawn(1)[0])
        assert a == b

    def test_found_by_planted_rung(self, near_setup):
        _, qs, _, index = near_setup
        grid = distance_grid(0.2, 0.5, 0.25)
        for i, q in enumerate(qs[:10]):
            direct = entropy_probe_search(index, q, 0.5, 2.0, np.random.default_rng(i))
            rep = search_unknown_radius(index, q, 2.0, grid, np.random.default_rng(i))
            if direct.success:
                assert rep.success
            if rep.success:
                assert rep.radius <= grid[-1]

    def test_failure_spends_full_budget(self, near_setup):
        _, _, _, index = near_setup
        grid = [0.3, 0.4, 0.5]
        q = np.full(index.d, 10.0)
        rep = search_unknown_radius(index, q, 2.0, grid, np.random.default_rng(0))
        assert not rep.success
        assert rep.probes_used == len(grid) * index.L * index.plan.probe_budget

    def test_index_family(self, near_setup):
        pts, qs, _, index = near_setup
        grid = [0.4, 0.5]
        fam = [build_near_linear(pts, replace(index.plan, r=r, width=index.plan.D * 2.0 * r), 2,
                                 np.random.default_rng(int(r * 10))) for r in grid]
        rep = search_unknown_radius(fam, qs[0], 2.0, grid, np.random.default_rng(1))
        check_sound(fam[-1], qs[0], rep)
        with pytest.raises(ValueError):
            search_unknown_radius(fam, qs[0], 2.0, [0.5], np.random.default_rng(1))

    @pytest.mark.parametrize("grid", [[], [0.5, 0.4]])
    def test_grid_validation(self, near_setup, grid):
        with pytest.raises(ValueError):
            search_unknown_radius(near_setup[3], near_setup[1][0], 2.0, grid, np.random.default_rng(0))
