import numpy as np
import pytest

from isacmap.localization import NoPointsError, PointSet
from isacmap.scene import PlanarWall, Scene
from isacmap.surface import (DegenerateGeometryError, SurfaceError, coverage_fraction,
                             fit_surface, kmeans, point_set_rmse)


class TestKMeans:
    def test_k1_centroid_is_mean(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(40, 3))
        labels, centroids, trace = kmeans(pts, 1, seed=0)
        assert np.allclose(centroids[0], pts.mean(axis=0), atol=1e-12)
        assert np.all(labels == 0)

    def test_separated_blobs_recovered(self):
        rng = np.random.default_rng(1)
        a = rng.normal(0, 0.2, size=(30, 3))
        b = rng.normal(0, 0.2, size=(25, 3)) + [50, 0, 0]
        pts = np.vstack([a, b])
        labels, centroids, _ = kmeans(pts, 2, seed=5)
        assert len(set(labels[:30])) == 1
        assert len(set(labels[30:])) == 1
        assert labels[0] != labels[-1]

    def test_inertia_monotone_descent(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-5, 5, size=(30, 3))
        _, _, trace = kmeans(pts, 3, seed=1)
        assert len(trace) >= 1
        assert np.all(np.diff(trace) <= 1e-9)

    def test_assignments_are_nearest_centroid(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-5, 5, size=(50, 3))
        labels, centroids, _ = kmeans(pts, 4, seed=2)
        d = np.linalg.norm(pts[:, None, :] - centroids[None, :, :], axis=2)
        assert np.array_equal(labels, np.argmin(d, axis=1))

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-5, 5, size=(60, 3))
        a = kmeans(pts, 3, seed=42)
        b = kmeans(pts, 3, seed=42)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])

    def test_k_larger_than_points_errors(self):
        with pytest.raises(SurfaceError):
            kmeans(np.zeros((3, 3)), 4)


def grid_points(f, n=25, lo=-2.0, hi=2.0, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    u = np.linspace(lo, hi, n)
    uu, vv = np.meshgrid(u, u)
    z = f(uu.ravel(), vv.ravel()) + noise * rng.standard_normal(n * n)
    return np.stack([uu.ravel(), vv.ravel(), z], axis=1)


class TestFitSurface:
    def test_exact_plane(self):
        pts = grid_points(lambda x, y: 1 + 2 * x - y)
        m = fit_surface(pts)
        assert np.allclose(m.coefficients[:3], [1, 2, -1], atol=1e-9)
        assert np.allclose(m.coefficients[3:], 0, atol=1e-9)
        assert m.residual_rms < 1e-9

    def test_quadratic_staged_vs_global_oracle(self):
        pts = grid_points(lambda x, y: x ** 2)
        m = fit_surface(pts)
        # Stage-1-only residual for comparison.
        A1 = np.stack([np.ones(len(pts)), pts[:, 0], pts[:, 1]], axis=1)
        c1, *_ = np.linalg.lstsq(A1, pts[:, 2], rcond=None)
        rms_stage1 = np.sqrt(np.mean((pts[:, 2] - A1 @ c1) ** 2))
        assert m.residual_rms <= rms_stage1 + 1e-12
        assert m.coefficients[3] == pytest.approx(1.0, abs=1e-6)
        # Single-shot 10-term least squares is the lower bound on the residual.
        u, v, z = pts[:, 0], pts[:, 1], pts[:, 2]
        A = np.stack([np.ones_like(u), u, v, u * u, u * v, v * v,
                      u ** 3, u * u * v, u * v * v, v ** 3], axis=1)
        c, *_ = np.linalg.lstsq(A, z, rcond=None)
        rms_global = np.sqrt(np.mean((z - A @ c) ** 2))
        assert m.residual_rms >= rms_global - 1e-12

    def test_staged_rms_never_increases(self):
        rng = np.random.default_rng(5)
        pts = grid_points(lambda x, y: 0.3 * x ** 3 - x * y + 0.5, noise=0.05)
        u, v, dep = pts[:, 0], pts[:, 1], pts[:, 2]
        A1 = np.stack([np.ones_like(u), u, v], axis=1)
        c1, *_ = np.linalg.lstsq(A1, dep, rcond=None)
        r1 = dep - A1 @ c1
        A2 = np.stack([u * u, u * v, v * v], axis=1)
        c2, *_ = np.linalg.lstsq(A2, r1, rcond=None)
        r2 = r1 - A2 @ c2
        m = fit_surface(pts)
        assert m.residual_rms <= np.sqrt(np.mean(r2 ** 2)) + 1e-12
        assert np.sqrt(np.mean(r2 ** 2)) <= np.sqrt(np.mean(r1 ** 2)) + 1e-12

    def test_vertical_wall_degenerate_in_z(self):
        rng = np.random.default_rng(6)
        pts = np.stack([np.full(40, 2.0), rng.uniform(-3, 3, 40), rng.uniform(0, 5, 40)],
                       axis=1)
        with pytest.raises(DegenerateGeometryError) as exc:
            fit_surface(pts, parameterization="z")
        assert exc.value.stage in (1, 2, 3)

    def test_vertical_wall_fits_with_auto(self):
        rng = np.random.default_rng(7)
        y = rng.uniform(-3, 3, 60)
        z = rng.uniform(0, 5, 60)
        x = 2.0 + 0.1 * y ** 2
        m = fit_surface(np.stack([x, y, z], axis=1), parameterization="auto")
        assert m.parameterization == "x"
        assert m.residual_rms < 1e-9

    def test_translation_equivariance_in_dependent_axis(self):
        pts = grid_points(lambda x, y: 0.2 * x ** 2 - y + 0.5, noise=0.01, seed=8)
        m0 = fit_surface(pts)
        shifted = pts.copy()
        shifted[:, 2] += 4.25
        m1 = fit_surface(shifted)
        assert m1.coefficients[0] == pytest.approx(m0.coefficients[0] + 4.25, abs=1e-9)
        assert np.allclose(m1.coefficients[1:], m0.coefficients[1:], atol=1e-9)

    def test_too_few_points(self):
        with pytest.raises(SurfaceError, match="10"):
            fit_surface(np.zeros((5, 3)))


class TestPointSetRmse:
    def scene(self):
        wall = PlanarWall(np.array([[-10, -10, 0], [10, -10, 0], [10, 10, 0], [-10, 10, 0]],
                                   dtype=float))
        return Scene(walls=(wall,), bs_positions=np.array([[0, 0, 3.0]]),
                     users=np.zeros((0, 3)))

    def ps(self, pts):
        pts = np.asarray(pts, dtype=float)
        n = len(pts)
        return PointSet(points=pts, user_ids=np.zeros(n, int), bs_ids=np.zeros(n, int),
                        domain_ids=np.zeros(n, int), residuals=np.zeros(n))

    def test_points_on_wall_zero(self):
        assert point_set_rmse(self.ps([[0, 0, 0], [3, 2, 0]]), self.scene()) == 0.0

    def test_single_point_meter_away(self):
        assert point_set_rmse(self.ps([[0, 0, 1]]), self.scene()) == pytest.approx(1.0)

    def test_empty_errors_distinct_from_zero(self):
        with pytest.raises(NoPointsError, match="no points"):
            point_set_rmse(self.ps(np.zeros((0, 3))), self.scene())

    def test_permutation_invariant(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(-5, 5, size=(20, 3))
        a = point_set_rmse(self.ps(pts), self.scene())
        b = point_set_rmse(self.ps(pts[::-1]), self.scene())
        assert a == pytest.approx(b, rel=1e-12)

    def test_coverage_fraction(self):
        samples = np.array([[0, 0, 0], [1, 0, 0], [5, 5, 0]], dtype=float)
        ps = self.ps([[0.05, 0, 0]])
        assert coverage_fraction(ps, samples, radius=0.2) == pytest.approx(1 / 3)
