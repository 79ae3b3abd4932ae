import numpy as np
import pytest
from scipy.stats import chisquare, ks_2samp

from mvstable.sphere import (gaussian_normalized_grid, hit_and_run_sphere,
                             uniform_sphere)


class TestUniform:
    def test_d1_two_point(self):
        pts = uniform_sphere(1, 10 ** 4, seed=0).points
        assert set(np.unique(pts)) == {-1.0, 1.0}
        share = float(np.mean(pts == 1.0))
        assert 0.47 <= share <= 0.53

    def test_mean_vector_shrinks(self):
        pts = uniform_sphere(3, 10 ** 5, seed=1).points
        assert float(np.linalg.norm(pts.mean(axis=0))) < 0.02

    def test_unit_norms(self):
        pts = uniform_sphere(4, 500, seed=2).points
        assert np.allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)

    def test_determinism(self):
        a = uniform_sphere(3, 100, seed=3).points
        b = uniform_sphere(3, 100, seed=3).points
        assert np.array_equal(a, b)


class TestGaussianGrid:
    def test_unit_norms_and_determinism(self):
        g1 = gaussian_normalized_grid(5, 200, seed=4)
        g2 = gaussian_normalized_grid(5, 200, seed=4)
        assert np.array_equal(g1.points, g2.points)
        assert np.allclose(np.linalg.norm(g1.points, axis=1), 1.0,
                           atol=1e-12)
        assert g1.kind == "gaussian_normalized"

    def test_no_duplicates(self):
        pts = gaussian_normalized_grid(2, 1000, seed=5).points
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        assert float(np.min(d2)) > 1e-18


class TestHitAndRun:
    def test_first_coordinate_centred(self):
        grid = hit_and_run_sphere(3, n=1000, burn=10_000, seed=6)
        x = grid.points[:, 0]
        # first-coordinate variance on S^2 is 1/3
        assert abs(float(np.mean(x))) < 3.0 * np.sqrt(1.0 / 3.0 / 1000)

    def test_matches_direct_uniform(self):
        hr = hit_and_run_sphere(4, n=1000, burn=10_000, seed=7).points
        un = uniform_sphere(4, 1000, seed=8).points
        stat = ks_2samp(hr[:, 0], un[:, 0]).statistic
        assert stat < 0.05

    def test_d1_behaviour(self):
        pts = hit_and_run_sphere(1, n=2000, burn=100, seed=9).points
        assert set(np.unique(pts)) == {-1.0, 1.0}

    def test_unit_norms(self):
        pts = hit_and_run_sphere(5, n=300, burn=500, seed=10).points
        assert np.allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("generator", [
    lambda n, seed: uniform_sphere(2, n, seed).points,
    lambda n, seed: gaussian_normalized_grid(2, n, seed).points,
    lambda n, seed: hit_and_run_sphere(2, n=n, burn=5000, seed=seed).points,
])
def test_angle_uniformity_chisquare(generator):
    pts = generator(10 ** 5, 11)
    angles = np.arctan2(pts[:, 1], pts[:, 0])
    counts, _ = np.histogram(angles, bins=20, range=(-np.pi, np.pi))
    assert chisquare(counts).pvalue > 0.01
