import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entropy_lsh.sampling import (
    DatasetFormatError,
    RandomInstanceSpec,
    SphereProjector,
    distance_grid,
    gaussian_instance,
    planted_queries,
    planted_query,
    read_csv_points,
    read_dataset,
    sphere_point,
    sphere_points,
    unit_vectors,
    write_dataset,
)


class TestSphere:
    @given(st.integers(1, 64), st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
    def test_exact_radius(self, d, r, seed):
        rng = np.random.default_rng(seed)
        q = rng.standard_normal(d)
        v = sphere_point(q, r, rng)
        assert np.linalg.norm(v - q) == pytest.approx(r, rel=1e-9)

    def test_one_dimensional(self, rng):
        q = np.array([2.0])
        pts = sphere_points(q, 0.5, 10_000, rng)[:, 0]
        assert set(np.round(pts, 12)) == {1.5, 2.5}
        frac = np.mean(pts > 2.0)
        assert abs(frac - 0.5) <= 3 * 0.5 / math.sqrt(10_000)

    def test_mean_is_centre(self, rng):
        d, m, r = 5, 100_000, 2.0
        q = rng.standard_normal(d)
        pts = sphere_points(q, r, m, rng)
        se = r / math.sqrt(d) / math.sqrt(m)
        assert np.all(np.abs(pts.mean(axis=0) - q) <= 3.5 * se)

    def test_rotation_symmetry(self, rng):
        d, m = 12, 100_000
        u = unit_vectors(m, d, rng)
        axis = rng.standard_normal(d)
        axis /= np.linalg.norm(axis)
        proj = u @ axis
        assert abs(proj.mean()) <= 3 * math.sqrt(1 / d / m)
        # Var(u.a) = 1/d; the fourth moment of a sphere coordinate is 3/(d(d+2))
        se_var = math.sqrt((3 / (d * (d + 2)) - 1 / d**2) / m)
        assert abs(proj.var() - 1 / d) <= 3 * se_var

    def test_rejects_bad_radius(self, rng):
        with pytest.raises(ValueError):
            sphere_point(np.zeros(3), 0.0, rng)


class TestSphereProjector:
    @pytest.mark.parametrize("k,d", [(3, 40), (8, 9), (6, 6), (10, 4)])
    def test_law_matches_explicit_sampling(self, k, d):
        # compare projected samples with A @ u for explicit u: means, covariance and norms
        rng = np.random.default_rng(k * 100 + d)
        A = rng.standard_normal((k, d))
        proj = SphereProjector(A)
        m = 60_000
        fast = proj.sample(m, rng)
        slow = unit_vectors(m, d, rng) @ A.T
        cov = A @ A.T / d
        np.testing.assert_allclose(fast.mean(axis=0), 0, atol=4 * math.sqrt(cov.diagonal().max() / m))
        np.testing.assert_allclose(np.cov(fast.T), cov, atol=0.03 * np.abs(cov).max())
        np.testing.assert_allclose(np.cov(slow.T), cov, atol=0.03 * np.abs(cov).max())
        # a non-linear statistic: the distribution of |A u|
        f, s = np.sort(np.linalg.norm(fast, axis=1)), np.sort(np.linalg.norm(slow, axis=1))
        ks = np.max(np.abs(np.searchsorted(f, s) / m - np.arange(1, m + 1) / m))
        assert ks < 1.95 * math.sqrt(2 / m)

    def test_deterministic(self):
        A = np.random.default_rng(0).standard_normal((4, 20))
        a = SphereProjector(A).sample(10, np.random.default_rng(5))
        b = SphereProjector(A).sample(10, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)


class TestGaussianInstance:
    def test_pairwise_distance_concentrates(self, rng):
        pts = gaussian_instance(RandomInstanceSpec(100, 1024), rng)
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))[np.triu_indices(100, 1)]
        assert abs(dist.mean() - 1) <= 0.02
        assert np.mean((dist > 0.9) & (dist < 1.1)) >= 0.99

    def test_norms(self, rng):
        pts = gaussian_instance(RandomInstanceSpec(200, 1024), rng)
        norms = np.linalg.norm(pts, axis=1)
        assert np.all(np.abs(norms - 1 / math.sqrt(2)) <= 0.1 / math.sqrt(2))

    @pytest.mark.parametrize("kw", [dict(n=0, d=4), dict(n=3, d=0), dict(n=3, d=4, query_distance=0.0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            RandomInstanceSpec(**kw)


class TestPlantedQuery:
    def test_distance_concentrates(self, rng):
        p = rng.standard_normal(1024)
        dists = [np.linalg.norm(planted_query(p, 0.5, rng) - p) for _ in range(200)]
        assert np.all((np.array(dists) >= 0.45) & (np.array(dists) <= 0.55))

    def test_zero_distance(self, rng):
        p = rng.standard_normal(8)
        np.testing.assert_array_equal(planted_query(p, 0.0, rng), p)

    def test_reproducible(self):
        p = np.ones(16)
        a = planted_query(p, 0.3, np.random.default_rng(7))
        b = planted_query(p, 0.3, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_batch(self, rng):
        pts = gaussian_instance(RandomInstanceSpec(50, 256), rng)
        qs, anchors = planted_queries(pts, 20, 0.25, rng)
        assert qs.shape == (20, 256) and len(set(anchors.tolist())) == 20
        d = np.linalg.norm(qs - pts[anchors], axis=1)
        assert np.all(np.abs(d - 0.25) < 0.05)


class TestDistanceGrid:
    def test_examples(self):
        assert distance_grid(0.3, 0.3, 0.1) == [0.3]
        grid = distance_grid(0.1, 0.2, 0.1)
        assert len(grid) == 9 and grid[-1] >= 0.2

    @given(st.floats(1e-3, 10), st.floats(1.0, 100.0), st.floats(1e-3, 1.0))
    def test_properties(self, r_min, ratio, eps):
        grid = distance_grid(r_min, r_min * ratio, eps)
        assert grid[0] == r_min
        assert grid[-1] >= r_min * ratio * (1 - 1e-12)
        assert len(grid) < 2 or grid[-2] < r_min * ratio
        np.testing.assert_allclose(np.array(grid[1:]) / np.array(grid[:-1]), 1 + eps, rtol=1e-12)

    @pytest.mark.parametrize("args", [(0.2, 0.1, 0.1), (0.0, 1.0, 0.1), (0.1, 1.0, 0.0)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            distance_grid(*args)


class TestDatasetFiles:
    def test_round_trip(self, tmp_path, rng):
        pts = rng.standard_normal((17, 5))
        path = tmp_path / "x.bin"
        write_dataset(path, pts)
        np.testing.assert_array_equal(read_dataset(path), pts)
        assert path.stat().st_size == 32 + 8 * 17 * 5

    def test_errors(self, tmp_path, rng):
        path = tmp_path / "x.bin"
        write_dataset(path, rng.standard_normal((3, 2)))
        data = path.read_bytes()
        (tmp_path / "short").write_bytes(data[:-1])
        (tmp_path / "magic").write_bytes(b"X" + data[1:])
        (tmp_path / "tiny").write_bytes(data[:10])
        for name in ("short", "magic", "tiny"):
            with pytest.raises(DatasetFormatError):
                read_dataset(tmp_path / name)

    def test_csv(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("x,y\n1,2\n3.5,-4\n")
        np.testing.assert_array_equal(read_csv_points(path), [[1, 2], [3.5, -4]])
        (tmp_path / "ragged.csv").write_text("1,2\n3\n")
        with pytest.raises(DatasetFormatError):
            read_csv_points(tmp_path / "ragged.csv")
