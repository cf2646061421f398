"""Moment, neighborhood-density, ring-report, and histogram-TV checks.

LOF is validated against scikit-learn on shared fixtures (both the
self-referential and the query-vs-reference paths), AvgkNN against hand
grid geometry, and the histogram TV of two matched clouds against the
analytic fluctuation floor for binned counts.
"""

import math
import types
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.neighbors import LocalOutlierFactor

from bnslab.metrics import (
    CirclesReport,
    DensityStats,
    avg_knn,
    circles_report,
    empirical_moments,
    histogram_tv,
    lof,
)
from bnslab.samplers import SamplerConfig, sample
from bnslab.score import mixture_field
from bnslab.toydata import (
    CirclesGeometry,
    CirclesSpec,
    circles_ring_mixture,
    sample_circles,
)


def unit_grid(side):
    """Integer lattice points (side^2, 2) with spacing exactly 1."""
    xs = np.arange(side, dtype=float)
    gx, gy = np.meshgrid(xs, xs)
    return np.column_stack([gx.ravel(), gy.ravel()])


def rigid_motion(points, theta, shift):
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    return points @ rot.T + np.asarray(shift)


class TestEmpiricalMoments:
    def test_identical_points_have_zero_covariance(self):
        pts = np.tile([1.5, -2.0], (40, 1))
        mean, cov, errs = empirical_moments(pts)
        np.testing.assert_array_equal(mean, [1.5, -2.0])
        np.testing.assert_array_equal(cov, np.zeros((2, 2)))
        np.testing.assert_array_equal(errs.mean, np.zeros(2))
        np.testing.assert_array_equal(errs.var, np.zeros(2))

    def test_standard_normal_cloud_recovers_moments(self):
        n = 100_000
        pts = np.random.default_rng(8).standard_normal((n, 2))
        mean, cov, errs = empirical_moments(pts)
        assert np.abs(mean).max() < 3.0 / math.sqrt(n)
        assert np.abs(np.diag(cov) - 1.0).max() < 0.03
        # gaussian m4 = 3 makes the variance stderr sqrt(2/n)
        np.testing.assert_allclose(errs.var, math.sqrt(2.0 / n), rtol=0.1)
        assert np.all(np.abs(np.diag(cov) - 1.0) < 4.0 * errs.var)

    def test_affine_transform_maps_moments_exactly(self):
        pts = np.random.default_rng(9).standard_normal((500, 2)) * [1.0, 2.5]
        a = np.array([[2.0, 0.5], [-1.0, 1.5]])
        b = np.array([3.0, -2.0])
        mean, cov, _ = empirical_moments(pts)
        mean_t, cov_t, _ = empirical_moments(pts @ a.T + b)
        np.testing.assert_allclose(mean_t, a @ mean + b, atol=1e-10)
        np.testing.assert_allclose(cov_t, a @ cov @ a.T, atol=1e-10)

    def test_accepts_wrapped_batches(self):
        pts = np.random.default_rng(10).standard_normal((50, 2))
        wrapped = types.SimpleNamespace(points=pts)
        mean_w, cov_w, _ = empirical_moments(wrapped)
        mean_p, cov_p, _ = empirical_moments(pts)
        np.testing.assert_array_equal(mean_w, mean_p)
        np.testing.assert_array_equal(cov_w, cov_p)

    def test_rejects_single_point(self):
        with pytest.raises(ValueError):
            empirical_moments(np.zeros((1, 2)))


class TestAvgKnn:
    def test_duplicated_query_in_reference_gives_zero(self):
        query = np.array([[0.3, -0.7]])
        ref = np.tile(query, (6, 1))
        stats = avg_knn(query, ref, k=5)
        np.testing.assert_array_equal(stats.avg_knn_values, [0.0])
        assert stats.k_avg_knn == 5

    def test_pair_at_unit_distance_self_excluded(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0]])
        stats = avg_knn(pts, pts, k=1)
        np.testing.assert_array_equal(stats.avg_knn_values, [1.0, 1.0])

    def test_distinct_arrays_keep_coincident_reference(self):
        # no self-exclusion across different point sets
        query = np.array([[1.0, 2.0]])
        ref = np.array([[1.0, 2.0], [4.0, 6.0]])
        stats = avg_knn(query, ref, k=1)
        np.testing.assert_array_equal(stats.avg_knn_values, [0.0])

    def test_grid_interior_recovers_spacing_exactly(self):
        """k=4 on a unit lattice hits the four axis neighbors."""
        grid = unit_grid(100)
        stats = avg_knn(grid, grid, k=4)
        interior = (
            (grid[:, 0] >= 1)
            & (grid[:, 0] <= 98)
            & (grid[:, 1] >= 1)
            & (grid[:, 1] <= 98)
        )
        assert np.all(stats.avg_knn_values[interior] == 1.0)
        # corner neighbors are 1, 1, sqrt(2), 2
        corner = np.flatnonzero((grid == 0.0).all(axis=1))[0]
        expected = (2.0 + math.sqrt(2.0) + 2.0) / 4.0
        assert abs(stats.avg_knn_values[corner] - expected) < 1e-12

    def test_k_bounds(self):
        pts = np.random.default_rng(4).standard_normal((3, 2))
        other = np.random.default_rng(5).standard_normal((2, 2))
        with pytest.raises(ValueError):
            avg_knn(pts, pts, k=0)
        with pytest.raises(ValueError):
            avg_knn(pts, pts, k=3)
        with pytest.raises(ValueError):
            avg_knn(other, pts, k=3)
        avg_knn(other, pts, k=2)

    @settings(max_examples=25, deadline=None)
    @given(
        theta=st.floats(-math.pi, math.pi),
        tx=st.floats(-5.0, 5.0),
        ty=st.floats(-5.0, 5.0),
    )
    def test_rigid_motion_invariance(self, theta, tx, ty):
        rng = np.random.default_rng(77)
        ref = rng.standard_normal((60, 2))
        query = rng.standard_normal((15, 2))
        base_knn = avg_knn(query, ref, k=5).avg_knn_values
        base_lof = lof(query, ref, k=10).lof_values
        ref_m = rigid_motion(ref, theta, (tx, ty))
        query_m = rigid_motion(query, theta, (tx, ty))
        moved_knn = avg_knn(query_m, ref_m, k=5).avg_knn_values
        moved_lof = lof(query_m, ref_m, k=10).lof_values
        np.testing.assert_allclose(moved_knn, base_knn, rtol=0, atol=1e-9)
        np.testing.assert_allclose(moved_lof, base_lof, rtol=0, atol=1e-9)


class TestLof:
    def test_coincident_cloud_reads_as_inliers(self):
        # floor convention keeps fully degenerate clouds at LOF 1
        pts = np.tile([2.0, 2.0], (25, 1))
        stats = lof(pts, pts, k=5)
        np.testing.assert_array_equal(stats.lof_values, np.ones(25))

    def test_far_point_flagged_against_dense_cluster(self):
        rng = np.random.default_rng(3)
        pts = np.vstack([rng.uniform(-1, 1, size=(400, 2)), [[25.0, 0.0]]])
        stats = lof(pts, pts, k=20)
        assert stats.lof_values[-1] > 1.5
        assert stats.lof_values[:-1].max() < 1.3

    def test_grid_interior_near_one(self):
        grid = unit_grid(40)
        stats = lof(grid, grid, k=20)
        interior = (
            (grid[:, 0] >= 5)
            & (grid[:, 0] <= 34)
            & (grid[:, 1] >= 5)
            & (grid[:, 1] <= 34)
        )
        vals = stats.lof_values[interior]
        assert vals.min() > 0.9 and vals.max() < 1.1

    def test_matches_sklearn_on_mixed_cloud(self):
        rng = np.random.default_rng(42)
        pts = np.vstack(
            [
                rng.standard_normal((150, 2)) * 0.5,
                rng.standard_normal((120, 2)) * 0.8 + [4.0, 1.0],
                rng.uniform(-3, 7, size=(30, 2)),
            ]
        )
        mine = lof(pts, pts, k=20).lof_values
        oracle = LocalOutlierFactor(n_neighbors=20)
        oracle.fit(pts)
        np.testing.assert_allclose(mine, -oracle.negative_outlier_factor_, rtol=1e-9)

    def test_matches_sklearn_for_fresh_queries(self):
        rng = np.random.default_rng(42)
        ref = np.vstack(
            [
                rng.standard_normal((150, 2)) * 0.5,
                rng.standard_normal((120, 2)) * 0.8 + [4.0, 1.0],
            ]
        )
        queries = rng.uniform(-3, 7, size=(80, 2))
        mine = lof(queries, ref, k=20).lof_values
        oracle = LocalOutlierFactor(n_neighbors=20, novelty=True)
        oracle.fit(ref)
        np.testing.assert_allclose(mine, -oracle.score_samples(queries), rtol=1e-9)

    def test_k_bounds(self):
        pts = np.random.default_rng(6).standard_normal((10, 2))
        with pytest.raises(ValueError):
            lof(pts, pts, k=0)
        with pytest.raises(ValueError):
            lof(pts, pts, k=10)
        lof(pts, pts, k=9)

    def test_density_stats_validation(self):
        with pytest.raises(ValueError):
            DensityStats(avg_knn_values=np.array([0.1, -0.2]))
        with pytest.raises(ValueError):
            DensityStats(lof_values=np.array([1.0, np.nan]))

    def test_summary_rows_format(self):
        stats = DensityStats(
            avg_knn_values=np.array([1.0, 2.0, 3.0]),
            lof_values=np.array([1.0, 1.0]),
            k_avg_knn=5,
            k_lof=20,
        )
        rows = stats.summary_rows()
        assert [r[0] for r in rows] == ["avg_knn", "lof"]
        name, k, mean, p50, p90, n = rows[0]
        assert (k, mean, p50, n) == (5, 2.0, 2.0, 3)
        assert abs(p90 - 2.8) < 1e-12
        assert rows[1][1:] == (20, 1.0, 1.0, 1.0, 2)


class TestCirclesReport:
    def test_ground_truth_sample_matches_imbalance(self):
        spec = CirclesSpec(n_points=110_000, seed=2)
        points, _ = sample_circles(spec)
        report = circles_report(points, CirclesGeometry.from_spec(spec))
        p = 1.0 / 11.0
        sd = math.sqrt(p * (1 - p) / spec.n_points)
        assert abs(report.minority_fraction - p) < 4 * sd
        # 3-sigma manifold band leaves ~0.27% of radial noise outside
        assert report.off_manifold_fraction < 0.006
        assert report.n == spec.n_points

    def test_points_on_minor_ring_all_minority(self):
        theta = np.linspace(0.0, 2 * math.pi, 50, endpoint=False)
        pts = 0.5 * np.column_stack([np.cos(theta), np.sin(theta)])
        geometry = CirclesGeometry(
            radius_major=1.0, radius_minor=0.5, ring_noise_sigma=0.02,
            eps_manifold=0.06,
        )
        report = circles_report(pts, geometry)
        assert report.minority_fraction == 1.0
        assert report.off_manifold_fraction == 0.0

    def test_equidistant_tie_goes_to_majority(self):
        geometry = CirclesGeometry(
            radius_major=1.0, radius_minor=0.5, ring_noise_sigma=0.05,
            eps_manifold=0.3,
        )
        report = circles_report(np.array([[0.75, 0.0]]), geometry)
        assert report.majority_fraction == 1.0

    def test_band_partition(self):
        geometry = CirclesGeometry(
            radius_major=1.0, radius_minor=0.5, ring_noise_sigma=0.02,
            eps_manifold=0.1,
        )
        radii = np.array([0.5, 0.75, 1.0, 2.0])
        pts = np.column_stack([radii, np.zeros(4)])
        report = circles_report(pts, geometry)
        assert report.minority_fraction == 0.25
        assert report.majority_fraction == 0.25
        assert report.off_manifold_fraction == 0.5

    def test_report_validation(self):
        with pytest.raises(ValueError):
            CirclesReport(
                minority_fraction=0.5,
                majority_fraction=0.5,
                off_manifold_fraction=0.1,
                n=10,
            )
        geometry = CirclesGeometry(
            radius_major=1.0, radius_minor=0.5, ring_noise_sigma=0.02,
            eps_manifold=0.06,
        )
        with pytest.raises(ValueError):
            circles_report(np.zeros((5, 3)), geometry)


class TestHistogramTv:
    def test_identical_batches_give_zero(self):
        pts = np.random.default_rng(1).uniform(-1, 1, size=(200, 2))
        assert histogram_tv(pts, pts, 10, (-2.0, 2.0)) == 0.0

    def test_disjoint_supports_give_one(self):
        a = np.random.default_rng(1).uniform(-3, -1, size=(300, 2))
        b = np.random.default_rng(2).uniform(1, 3, size=(300, 2))
        assert histogram_tv(a, b, 8, (-4.0, 4.0)) == 1.0

    def test_matched_normals_sit_on_fluctuation_floor(self):
        """TV of two same-law clouds equals the binomial noise level.

        With bin probabilities p the expected distance is about
        sqrt(1/(pi n)) * sum(sqrt(p(1-p))); the empirical value for
        matched standard normals lands a few percent under it because
        sparse tail bins are sub-gaussian.
        """
        n, bins, lo, hi = 100_000, 50, -4.0, 4.0
        rng = np.random.default_rng(0)
        tv = histogram_tv(
            rng.standard_normal((n, 2)), rng.standard_normal((n, 2)), bins, (lo, hi)
        )
        edges = np.linspace(lo, hi, bins + 1)
        cdf = 0.5 * (1.0 + np.array([math.erf(e / math.sqrt(2)) for e in edges]))
        p1 = np.diff(cdf)
        p = np.outer(p1, p1).ravel()
        floor = math.sqrt(1.0 / (math.pi * n)) * np.sqrt(p * (1.0 - p)).sum()
        assert 0.85 * floor < tv < 1.05 * floor

    def test_coverage_warning_fires_outside_bounds(self):
        a = np.random.default_rng(3).uniform(0, 10, size=(500, 2))
        b = np.random.default_rng(4).uniform(0, 1, size=(500, 2))
        with pytest.warns(RuntimeWarning):
            histogram_tv(a, b, 5, (0.0, 1.0))

    def test_per_axis_bounds_accepted(self):
        pts = np.random.default_rng(5).uniform(0, 1, size=(100, 2))
        assert histogram_tv(pts, pts, 4, [[0.0, 1.0], [-1.0, 2.0]]) == 0.0

    def test_parameter_validation(self):
        pts = np.zeros((10, 2))
        with pytest.raises(ValueError):
            histogram_tv(pts, pts, 0, (-1.0, 1.0))
        with pytest.raises(ValueError):
            histogram_tv(pts, np.zeros((10, 3)), 4, (-1.0, 1.0))
        with pytest.raises(ValueError):
            histogram_tv(pts, pts, 4, (1.0, -1.0))


class TestMinorityPromotionDirection:
    def test_boosted_batches_sit_in_sparser_reference_regions(self, toy_schedule):
        """Boost-and-skip raises the mean AvgkNN against ground truth.

        The minority ring carries 27x lower linear reference density, so
        shifting mass onto it shows up as larger neighbor distances.
        """
        spec = CirclesSpec(
            n_points=8000, seed=7, radius_major=0.4, radius_minor=1.2,
            ring_noise_sigma=0.08,
        )
        field = mixture_field(circles_ring_mixture(spec, 32), toy_schedule)
        ref, _ = sample_circles(spec)
        std = sample(
            field, toy_schedule,
            SamplerConfig(mode="standard", n_samples=2000, seed=19),
        )
        bns = sample(
            field, toy_schedule,
            SamplerConfig(
                mode="boost_skip", n_samples=2000, seed=19,
                gamma=math.sqrt(2.0), delta_skip=150,
            ),
        )
        mean_std = avg_knn(std, ref, k=5).avg_knn_values.mean()
        mean_bns = avg_knn(bns, ref, k=5).avg_knn_values.mean()
        assert mean_bns > 1.05 * mean_std
