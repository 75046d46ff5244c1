import itertools

import numpy as np
import pytest

from frechet_ma.quantile import (
    ProbGrid,
    QuantileGrid,
    RawQuantileGrid,
    combine,
    empirical_quantile,
    gaussian_quantile,
    isotonic_project,
    wasserstein_sq,
)

from oracles import bisect_normal_quantile, monotone_projection_exhaustive


def random_monotone(rng, grid):
    return QuantileGrid(grid, np.cumsum(rng.uniform(0.0, 1.0, grid.m_points)) + rng.normal())


class TestProbGrid:
    def test_midpoints(self):
        grid = ProbGrid(4)
        np.testing.assert_allclose(grid.t_values, [0.125, 0.375, 0.625, 0.875])
        assert grid.quad_weight == 0.25

    def test_strictly_increasing_inside_unit_interval(self):
        grid = ProbGrid(137)
        assert np.all(np.diff(grid.t_values) > 0)
        assert 0.0 < grid.t_values[0] and grid.t_values[-1] < 1.0

    def test_integrates_constant_to_exactly_one(self):
        for m in (1, 3, 100, 1000):
            assert ProbGrid(m).integrate(np.ones(m)) == 1.0

    @pytest.mark.parametrize("bad", [0, -3, 2.5])
    def test_rejects_bad_size(self, bad):
        with pytest.raises(ValueError):
            ProbGrid(bad)

    def test_equality_by_size(self):
        assert ProbGrid(10) == ProbGrid(10)
        assert ProbGrid(10) != ProbGrid(11)


class TestQuantileGridValidation:
    def test_rejects_decreasing(self):
        with pytest.raises(ValueError, match="non-decreasing"):
            QuantileGrid(ProbGrid(3), [1.0, 0.9, 1.2])

    def test_repairs_negligible_dip(self):
        q = QuantileGrid(ProbGrid(3), [1.0, 1.0 - 1e-15, 2.0])
        assert np.all(np.diff(q.values) >= 0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            QuantileGrid(ProbGrid(2), [0.0, np.inf])
        with pytest.raises(ValueError, match="finite"):
            RawQuantileGrid(ProbGrid(2), [np.nan, 0.0])

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            QuantileGrid(ProbGrid(3), [1.0, 2.0])


class TestGaussianQuantile:
    def test_degenerate_sigma_zero(self):
        grid = ProbGrid(7)
        np.testing.assert_array_equal(gaussian_quantile(0.0, 0.0, grid).values, np.zeros(7))
        np.testing.assert_array_equal(gaussian_quantile(2.0, 0.0, grid).values, np.full(7, 2.0))

    def test_matches_bisection_oracle(self):
        grid = ProbGrid(100)
        got = gaussian_quantile(0.0, 1.0, grid).values
        expected = np.array([bisect_normal_quantile(t) for t in grid.t_values])
        np.testing.assert_allclose(got, expected, atol=1e-9)
        # median-adjacent node: t_50 = 0.495
        assert abs(got[49] - (-0.01253)) < 5e-6

    def test_location_scale(self):
        grid = ProbGrid(50)
        base = gaussian_quantile(0.0, 1.0, grid).values
        np.testing.assert_allclose(
            gaussian_quantile(-1.5, 2.5, grid).values, -1.5 + 2.5 * base, rtol=1e-14
        )

    def test_rejects_bad_inputs(self):
        grid = ProbGrid(5)
        with pytest.raises(ValueError):
            gaussian_quantile(0.0, -1.0, grid)
        with pytest.raises(ValueError):
            gaussian_quantile(np.nan, 1.0, grid)
        with pytest.raises(ValueError):
            gaussian_quantile(0.0, np.inf, grid)


class TestEmpiricalQuantile:
    def test_single_sample_is_constant(self):
        grid = ProbGrid(9)
        np.testing.assert_array_equal(empirical_quantile([5.0], grid).values, np.full(9, 5.0))

    def test_two_samples_on_two_point_grid(self):
        # t = (0.25, 0.75) hit the plotting positions of n = 2 exactly
        grid = ProbGrid(2)
        np.testing.assert_array_equal(empirical_quantile([1.0, 2.0], grid).values, [1.0, 2.0])

    def test_permutation_invariant(self):
        grid = ProbGrid(2)
        np.testing.assert_array_equal(
            empirical_quantile([3.0, 1.0, 2.0], grid).values,
            empirical_quantile([1.0, 2.0, 3.0], grid).values,
        )

    def test_interpolation_between_order_statistics(self):
        # n=2: positions 0.25 and 0.75; halfway at t=0.5 interpolates to 1.5
        grid = ProbGrid(1)
        np.testing.assert_array_equal(empirical_quantile([1.0, 2.0], grid).values, [1.5])

    def test_clamps_outside_extremes(self):
        grid = ProbGrid(100)
        vals = empirical_quantile([1.0, 2.0], grid).values
        assert vals[0] == 1.0 and vals[-1] == 2.0

    def test_rejects_empty_and_non_finite(self):
        grid = ProbGrid(3)
        with pytest.raises(ValueError):
            empirical_quantile([], grid)
        with pytest.raises(ValueError):
            empirical_quantile([1.0, np.nan], grid)


class TestWassersteinSq:
    def test_zero_on_identical(self):
        grid = ProbGrid(30)
        q = gaussian_quantile(0.3, 1.7, grid)
        assert wasserstein_sq(q, q) == 0.0

    def test_location_shift_exact(self):
        grid = ProbGrid(100)
        a = gaussian_quantile(0.0, 1.0, grid)
        b = gaussian_quantile(1.0, 1.0, grid)
        assert wasserstein_sq(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_scale_difference_close_to_closed_form(self):
        grid = ProbGrid(1000)
        a = gaussian_quantile(0.0, 1.0, grid)
        b = gaussian_quantile(0.0, 2.0, grid)
        d = wasserstein_sq(a, b)
        assert d < 1.0
        assert abs(d - 1.0) < 0.01

    def test_grid_refinement_converges(self):
        # grid truncation error vs the closed form shrinks as M doubles
        errors = []
        for m in (250, 500, 1000, 2000):
            grid = ProbGrid(m)
            a = gaussian_quantile(0.2, 0.8, grid)
            b = gaussian_quantile(-0.5, 2.1, grid)
            closed = (0.2 + 0.5) ** 2 + (0.8 - 2.1) ** 2
            errors.append(abs(wasserstein_sq(a, b) - closed))
        assert all(e2 < e1 for e1, e2 in zip(errors, errors[1:]))

    def test_rejects_mismatched_grids(self):
        a = gaussian_quantile(0.0, 1.0, ProbGrid(10))
        b = gaussian_quantile(0.0, 1.0, ProbGrid(11))
        with pytest.raises(ValueError, match="grids"):
            wasserstein_sq(a, b)

    def test_metric_axioms_on_random_grids(self):
        rng = np.random.default_rng(42)
        grid = ProbGrid(17)
        for _ in range(1000):
            a = random_monotone(rng, grid)
            b = random_monotone(rng, grid)
            dab = wasserstein_sq(a, b)
            assert dab >= 0.0
            assert dab == wasserstein_sq(b, a)
            assert (dab == 0.0) == bool(np.array_equal(a.values, b.values))

    def test_triangle_inequality(self):
        rng = np.random.default_rng(7)
        grid = ProbGrid(13)
        for _ in range(1000):
            a, b, c = (random_monotone(rng, grid) for _ in range(3))
            dab = np.sqrt(wasserstein_sq(a, b))
            dbc = np.sqrt(wasserstein_sq(b, c))
            dac = np.sqrt(wasserstein_sq(a, c))
            assert dac <= dab + dbc + 1e-12


class TestIsotonicProject:
    def test_identity_on_monotone(self):
        grid = ProbGrid(3)
        got = isotonic_project(RawQuantileGrid(grid, [1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(got.values, [1.0, 2.0, 3.0])

    def test_known_projections(self):
        grid = ProbGrid(3)
        np.testing.assert_array_equal(
            isotonic_project(RawQuantileGrid(grid, [3.0, 1.0, 2.0])).values, [2.0, 2.0, 2.0]
        )
        np.testing.assert_array_equal(
            isotonic_project(RawQuantileGrid(grid, [1.0, 3.0, 2.0])).values, [1.0, 2.5, 2.5]
        )

    def test_matches_exhaustive_oracle_small_grids(self):
        for length in range(1, 6):
            grid = ProbGrid(length)
            for values in itertools.product((0.0, 1.0, 2.0), repeat=length):
                got = isotonic_project(RawQuantileGrid(grid, np.array(values))).values
                expected = monotone_projection_exhaustive(values)
                np.testing.assert_allclose(got, expected, atol=1e-9)

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        grid = ProbGrid(21)
        for _ in range(200):
            raw = RawQuantileGrid(grid, rng.normal(size=21))
            once = isotonic_project(raw)
            twice = isotonic_project(once)
            np.testing.assert_array_equal(once.values, twice.values)

    def test_order_preserving(self):
        rng = np.random.default_rng(11)
        grid = ProbGrid(15)
        for _ in range(200):
            lo = rng.normal(size=15)
            hi = lo + rng.uniform(0.0, 1.0, 15)
            plo = isotonic_project(RawQuantileGrid(grid, lo)).values
            phi = isotonic_project(RawQuantileGrid(grid, hi)).values
            assert np.all(plo <= phi + 1e-12)


class TestCombine:
    def test_single_identity(self):
        grid = ProbGrid(20)
        q = gaussian_quantile(1.0, 2.0, grid)
        np.testing.assert_array_equal(combine([1.0], [q]).values, q.values)

    def test_location_family_mixture(self):
        grid = ProbGrid(64)
        got = combine([0.5, 0.5], [gaussian_quantile(0.0, 1.0, grid), gaussian_quantile(2.0, 1.0, grid)])
        np.testing.assert_allclose(got.values, gaussian_quantile(1.0, 1.0, grid).values, rtol=1e-14)

    def test_cancellation(self):
        grid = ProbGrid(12)
        q = gaussian_quantile(0.4, 1.3, grid)
        np.testing.assert_array_equal(combine([1.0, -1.0], [q, q]).values, np.zeros(12))

    def test_convex_combination_of_monotone_is_monotone(self):
        rng = np.random.default_rng(5)
        grid = ProbGrid(25)
        for _ in range(200):
            parts = [random_monotone(rng, grid) for _ in range(3)]
            w = rng.dirichlet(np.ones(3))
            raw = combine(w, parts)
            assert np.all(np.diff(raw.values) >= -1e-12)

    def test_rejects_mismatches(self):
        grid = ProbGrid(6)
        q = gaussian_quantile(0.0, 1.0, grid)
        with pytest.raises(ValueError):
            combine([1.0, 0.5], [q])
        with pytest.raises(ValueError):
            combine([0.5, 0.5], [q, gaussian_quantile(0.0, 1.0, ProbGrid(7))])
        with pytest.raises(ValueError):
            combine([], [])
