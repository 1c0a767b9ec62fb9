import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entropy_lsh.lsh_family import (
    CompositeHash,
    ProjectionHash,
    composite_key,
    interval_bucket,
    key_digest,
    key_digests,
    new_composite_hash,
    new_projection,
    project,
    read_composite,
    sign_bit,
    write_composite,
)
from entropy_lsh.math_kernel import far_collision_prob, unit_collision_prob
from entropy_lsh.sampling import unit_vectors
from entropy_lsh.verify import fresh_hashes, mc_collision_frequency

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestProjectionHash:
    def test_reproducible(self):
        a = new_projection(8, 3.0, np.random.default_rng(1))
        b = new_projection(8, 3.0, np.random.default_rng(1))
        np.testing.assert_array_equal(a.direction, b.direction)
        assert a.shift == b.shift
        assert 0 <= a.shift < 3.0

    @pytest.mark.parametrize("d,D", [(0, 3.0), (4, 0.0), (4, -1.0)])
    def test_rejects_bad_arguments(self, d, D, rng):
        with pytest.raises(ValueError):
            new_projection(d, D, rng)

    def test_shift_must_be_half_open(self):
        with pytest.raises(ValueError):
            ProjectionHash(np.ones(2), 3.0, 3.0)

    def test_one_dimensional(self, rng):
        h = new_projection(1, 3.0, rng)
        assert project(h, [2.0]) == pytest.approx(2 * h.direction[0])

    def test_origin_and_linearity(self, rng):
        h = new_projection(16, 3.0, rng)
        p, q = rng.standard_normal(16), rng.standard_normal(16)
        assert project(h, np.zeros(16)) == 0.0
        assert project(h, p + q) == pytest.approx(project(h, p) + project(h, q), rel=1e-9, abs=1e-12)

    def test_dimension_mismatch(self, rng):
        h = new_projection(4, 3.0, rng)
        with pytest.raises(ValueError):
            project(h, np.zeros(5))

    def test_two_stability(self, rng):
        # v.p - v.q over fresh v is N(0, |p - q|^2)
        d, m = 10, 100_000
        p = rng.standard_normal(d)
        q = p + 0.7 * rng.standard_normal(d) / math.sqrt(d)
        delta = np.linalg.norm(p - q)
        H = fresh_hashes(m, d, 3.0, rng)
        diff = H.projected(np.stack([p]))[0] - H.projected(np.stack([q]))[0]
        se_mean = delta / math.sqrt(m)
        se_var = delta**2 * math.sqrt(2 / (m - 1))
        assert abs(diff.mean()) <= 3 * se_mean
        assert abs(diff.var(ddof=1) - delta**2) <= 3 * se_var

    def test_unit_norm_projection_moments(self, rng):
        m = 100_000
        p = rng.standard_normal(6)
        p /= np.linalg.norm(p)
        vals = fresh_hashes(m, 6, 3.0, rng).projected(p[None, :])[0]
        assert abs(vals.mean()) <= 3 / math.sqrt(m)
        assert abs(vals.var(ddof=1) - 1) <= 3 * math.sqrt(2 / m)


class TestIntervalBucket:
    def test_floor_semantics(self):
        h = ProjectionHash(np.array([1.0]), 0.5, 3.0)
        assert interval_bucket(h, [-0.5]) == 0
        assert interval_bucket(h, [2.5 - 1e-9]) == 0
        assert interval_bucket(h, [2.5]) == 1
        assert interval_bucket(h, [-0.6]) == -1

    @given(finite, st.integers(-50, 50))
    def test_shift_equivariance(self, x, m):
        h = ProjectionHash(np.array([1.0]), 0.25, 2.0)
        assert interval_bucket(h, [x + 2.0 * m]) == interval_bucket(h, [x]) + m

    def test_collision_rate_d3(self):
        freq = mc_collision_frequency(3.0, 1_000_000, np.random.default_rng(3))
        assert abs(freq - far_collision_prob(3.0)) <= 0.005
        se = math.sqrt(freq * (1 - freq) / 1_000_000)
        assert abs(freq - unit_collision_prob(3.0)) <= 3 * se

    @pytest.mark.parametrize("D", [1.0, 2.0, 5.0])
    def test_collision_matches_exact_rate(self, D):
        g = unit_collision_prob(D)
        freq = mc_collision_frequency(D, 400_000, np.random.default_rng(int(D * 10)))
        assert abs(freq - g) <= 3 * math.sqrt(g * (1 - g) / 400_000)

    def test_residue_uniform(self, rng):
        # (v.p + shift) mod D over fresh hashes: chi-square against 20 equal cells
        D, m = 3.0, 200_000
        p = rng.standard_normal(4)
        H = fresh_hashes(m, 4, D, rng)
        residue = np.mod(H.projected(p[None, :])[0] + H.shifts, D)
        counts = np.histogram(residue, bins=20, range=(0, D))[0]
        chi2 = ((counts - m / 20) ** 2 / (m / 20)).sum()
        assert chi2 < 43.8  # 99.9th percentile of chi-square(19)


class TestSignBit:
    def test_origin_maps_to_one(self, rng):
        h = new_projection(3, 1.0, rng)
        assert sign_bit(h, np.zeros(3)) == 1

    def test_antipodal(self, rng):
        h = new_projection(5, 1.0, rng)
        p = rng.standard_normal(5)
        assert sign_bit(h, p) != sign_bit(h, -p)

    @given(st.floats(1e-3, 1e3))
    def test_scale_invariant(self, lam):
        h = ProjectionHash(np.array([0.3, -1.2, 0.8]), 0.0, 1.0)
        p = np.array([1.0, 0.2, -0.5])
        assert sign_bit(h, lam * p) == sign_bit(h, p)

    def test_near_pair_disagreement(self, rng):
        # Gaussian instance at c = 10: flip rate = angle / pi, small
        c, d, m = 10.0, 64, 200_000
        p = rng.standard_normal(d) / math.sqrt(2 * d)
        q = p + rng.standard_normal(d) / (c * math.sqrt(d))
        H = CompositeHash(rng.standard_normal((m, d)), np.zeros(m), 1.0, "sign")
        keys = H.keys(np.stack([p, q]))
        rate = np.mean(keys[0] != keys[1])
        cos = p @ q / (np.linalg.norm(p) * np.linalg.norm(q))
        expected = math.acos(cos) / math.pi
        assert 0 < rate < 0.1
        assert abs(rate - expected) <= 3 * math.sqrt(expected / m)


class TestCompositeHash:
    def test_k1_is_single_hash(self, rng):
        H = new_composite_hash(1, 4, 2.0, rng)
        p = rng.standard_normal(4)
        assert composite_key(H, p) == (interval_bucket(H.projections[0], p),)

    def test_matches_scalar_definition(self, rng):
        H = new_composite_hash(12, 7, 1.5, rng)
        p = rng.standard_normal(7)
        assert composite_key(H, p) == tuple(interval_bucket(h, p) for h in H.projections)
        S = CompositeHash(H.directions, H.shifts, H.width, "sign")
        assert composite_key(S, p) == tuple(sign_bit(h, p) for h in H.projections)

    def test_equal_points_equal_keys(self, rng):
        H = new_composite_hash(20, 5, 3.0, rng)
        p = rng.standard_normal(5)
        assert composite_key(H, p) == composite_key(H, p.copy())

    def test_validation(self, rng):
        with pytest.raises(ValueError):
            new_composite_hash(0, 3, 1.0, rng)
        with pytest.raises(ValueError):
            CompositeHash(np.ones((2, 3)), np.zeros(3), 1.0)
        with pytest.raises(ValueError):
            CompositeHash(np.ones((2, 3)), np.zeros(2), 1.0, "other")
        with pytest.raises(ValueError):
            CompositeHash.from_projections([ProjectionHash(np.ones(2), 0.0, 1.0), ProjectionHash(np.ones(2), 0.0, 2.0)])
        H = new_composite_hash(3, 4, 1.0, rng)
        with pytest.raises(ValueError):
            composite_key(H, np.zeros(3))

    @pytest.mark.parametrize("k", [2, 4, 8])
    def test_far_collision_factorises(self, k):
        # unit-distance pairs: full-key collision rate is (exact per-projection rate)^k
        rng = np.random.default_rng(k)
        trials, d = 100_000, 3
        hits = 0
        for _ in range(10):
            p = rng.standard_normal(d)
            q = p + unit_vectors(1, d, rng)[0]
            H = fresh_hashes(trials // 10 * k, d, 3.0, rng)
            keys = H.keys(np.stack([p, q]))
            same = (keys[0] == keys[1]).reshape(-1, k).all(axis=1)
            hits += int(same.sum())
        expected = unit_collision_prob(3.0) ** k
        assert abs(hits / trials - expected) <= 3 * math.sqrt(expected * (1 - expected) / trials)

    def test_k46_far_collisions_rare(self):
        # 10^7 unit-distance trials; a trial survives stage i if projection i collides.
        # Expected about 10^7 * 0.734^46 = 6.6 full-key collisions.
        rng = np.random.default_rng(46)
        p, q = np.zeros(2), np.array([1.0, 0.0])
        alive = 10_000_000
        for _ in range(46):
            H = fresh_hashes(alive, 2, 3.0, rng)
            keys = H.keys(np.stack([p, q]))
            alive = int(np.count_nonzero(keys[0] == keys[1]))
        assert alive <= 30


class TestDigests:
    def test_stable_values(self):
        # frozen: digests are part of the index file format
        assert key_digest((0,)) == key_digest([0])
        d1 = key_digest((1, 2, 3))
        assert d1 == key_digest(np.array([1, 2, 3]))
        assert d1 != key_digest((3, 2, 1))
        assert key_digest((0, 0)) != key_digest((0,))

    @given(st.lists(st.integers(-(2**40), 2**40), min_size=1, max_size=40))
    def test_batch_matches_single(self, key):
        batch = key_digests(np.array([key, key]))
        assert int(batch[0]) == int(batch[1]) == key_digest(key)

    def test_no_collisions_on_many_keys(self, rng):
        keys = rng.integers(-5, 5, size=(500_000, 8))
        uniq_keys = np.unique(keys, axis=0)
        assert len(np.unique(key_digests(uniq_keys))) == len(uniq_keys)


class TestSerialisation:
    @pytest.mark.parametrize("mode", ["interval", "sign"])
    def test_round_trip(self, rng, mode):
        H = CompositeHash(rng.standard_normal((5, 9)), rng.uniform(0, 2.0, 5), 2.0, mode)
        buf = io.BytesIO()
        write_composite(buf, H)
        buf.seek(0)
        G = read_composite(buf)
        np.testing.assert_array_equal(G.directions, H.directions)
        np.testing.assert_array_equal(G.shifts, H.shifts)
        assert (G.width, G.mode) == (H.width, H.mode)

    def test_truncated(self, rng):
        buf = io.BytesIO()
        write_composite(buf, new_composite_hash(3, 4, 1.0, rng))
        with pytest.raises(EOFError):
            read_composite(io.BytesIO(buf.getvalue()[:-5]))
