"""Tests of the two derivative estimators and their configurations."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import make_smoothing_spline

from selfreg import (GllaConfig, SplineConfig, ValidationError,
                     fit_smoothing_spline, glla_rows, glla_weights,
                     spar_to_penalty, spline_rows)


class TestGllaWeights:
    def test_two_point_window_is_midpoint_and_difference(self):
        W = glla_weights(2, 1.0)
        np.testing.assert_allclose(W, [[0.5, -1.0], [0.5, 1.0]],
                                   atol=1e-14)

    def test_three_point_window_slope_is_central_difference(self):
        W = glla_weights(3, 1.0)
        np.testing.assert_allclose(W[:, 1], [-0.5, 0.0, 0.5], atol=1e-14)
        np.testing.assert_allclose(W[:, 0], [1 / 3] * 3, atol=1e-14)

    def test_weights_reproduce_level_and_slope_exactly(self):
        # Applying the weights to a sampled line must return its value
        # at the window centre and its slope, by construction.
        for d in (2, 3, 4, 7, 10):
            dt = 0.5
            W = glla_weights(d, dt)
            t = dt * np.arange(d)
            y = 2.0 - 3.0 * t
            centre = t.mean()
            assert y @ W[:, 0] == pytest.approx(2.0 - 3.0 * centre,
                                                abs=1e-12)
            assert y @ W[:, 1] == pytest.approx(-3.0, abs=1e-12)

    def test_embedding_below_two_rejected(self):
        with pytest.raises(ValidationError):
            glla_weights(1, 1.0)
        with pytest.raises(ValidationError):
            GllaConfig(embedding=1)

    @given(st.integers(2, 12), st.floats(0.05, 4.0))
    @settings(max_examples=50, deadline=None)
    def test_design_orthogonality(self, d, dt):
        # W is the pseudo-inverse of the local design [1, t - t_mean],
        # so projecting the design through it gives the identity.
        W = glla_weights(d, dt)
        offsets = dt * (np.arange(1, d + 1) - (d + 1) / 2.0)
        L = np.column_stack([np.ones(d), offsets])
        np.testing.assert_allclose(L.T @ W, np.eye(2), atol=1e-9)


class TestGllaRows:
    def test_two_point_embedding_equals_first_differences(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=30)
        u = rng.normal(size=30)
        t = np.arange(30.0)
        rows = glla_rows(y, u, t, GllaConfig(embedding=2))
        np.testing.assert_allclose(rows.slope, np.diff(y), atol=1e-12)
        np.testing.assert_allclose(rows.level, (y[1:] + y[:-1]) / 2,
                                   atol=1e-12)
        np.testing.assert_allclose(rows.times, t[:-1] + 0.5, atol=1e-12)

    def test_row_count_is_n_minus_d_plus_one(self):
        y = np.zeros(25)
        rows = glla_rows(y, y, np.arange(25.0), GllaConfig(embedding=6))
        assert len(rows) == 20

    def test_linear_signal_slope_exact(self):
        t = np.arange(40.0)
        y = 0.7 + 0.3 * t
        rows = glla_rows(y, np.zeros_like(t), t, GllaConfig(embedding=8))
        np.testing.assert_allclose(rows.slope, 0.3, atol=1e-10)
        np.testing.assert_allclose(rows.level, 0.7 + 0.3 * rows.times,
                                   atol=1e-10)

    def test_excitation_is_window_averaged(self):
        u = np.zeros(20)
        u[10] = 1.0
        rows = glla_rows(np.zeros(20), u, np.arange(20.0),
                         GllaConfig(embedding=4))
        windows = [u[i:i + 4].mean() for i in range(17)]
        np.testing.assert_allclose(rows.excitation, windows, atol=1e-14)

    def test_series_shorter_than_embedding_rejected(self):
        with pytest.raises(ValidationError):
            glla_rows(np.zeros(3), np.zeros(3), np.arange(3.0),
                      GllaConfig(embedding=4))

    def test_irregular_spacing_warns(self):
        t = np.array([0.0, 1.0, 2.0, 3.0, 4.5, 6.5])
        y = np.zeros(6)
        with pytest.warns(UserWarning, match="time steps vary"):
            glla_rows(y, y, t, GllaConfig(embedding=2))

    def test_mildly_irregular_spacing_accepted_silently(self):
        t = np.array([0.0, 1.0, 2.02, 3.0, 4.0, 5.01])
        y = np.zeros(6)
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            glla_rows(y, y, t, GllaConfig(embedding=2))


class TestSplineConfig:
    def test_exactly_one_knob_required(self):
        with pytest.raises(ValidationError):
            SplineConfig()
        with pytest.raises(ValidationError):
            SplineConfig(spar=0.5, penalty=1.0)

    @pytest.mark.parametrize("spar", [-0.1, 1.1])
    def test_spar_range_enforced(self, spar):
        with pytest.raises(ValidationError):
            SplineConfig(spar=spar)

    def test_negative_penalty_rejected(self):
        with pytest.raises(ValidationError):
            SplineConfig(penalty=-1.0)

    def test_penalty_passes_through_resolve(self):
        t = np.arange(50.0)
        assert SplineConfig(penalty=7.5).resolve_penalty(t) == 7.5

    def test_spar_map_is_monotone(self):
        t = np.arange(50.0)
        lams = [spar_to_penalty(s, t) for s in np.linspace(0, 1, 11)]
        assert all(a < b for a, b in zip(lams, lams[1:]))

    def test_spar_map_formula(self):
        t = np.arange(50.0)
        expected = 256.0 ** (3 * 0.6 - 1) * (49.0 / 50.0) ** 3
        assert spar_to_penalty(0.6, t) == pytest.approx(expected, rel=1e-12)


class TestSmoothingSpline:
    def test_zero_penalty_interpolates(self):
        rng = np.random.default_rng(1)
        t = np.arange(30.0)
        y = rng.normal(size=30)
        fit = fit_smoothing_spline(t, y, SplineConfig(penalty=0.0))
        np.testing.assert_allclose(fit.fitted, y, atol=1e-8)

    @pytest.mark.parametrize("spar", [0.0, 0.3, 0.7, 1.0])
    def test_straight_line_reproduced_for_any_smoothing(self, spar):
        # A line has zero curvature, so no penalty can pull it away.
        t = np.arange(40.0)
        y = 1.2 - 0.4 * t
        fit = fit_smoothing_spline(t, y, SplineConfig(spar=spar))
        np.testing.assert_allclose(fit.fitted, y, atol=1e-10)
        np.testing.assert_allclose(fit.derivative_at_knots(), -0.4,
                                   atol=1e-10)

    def test_matches_scipy_reference_values_and_derivatives(self):
        rng = np.random.default_rng(0)
        t = np.arange(40.0)
        y = np.sin(0.3 * t) + rng.normal(0.0, 0.2, t.size)
        for lam in (0.5, 5.0, 50.0):
            mine = fit_smoothing_spline(t, y, SplineConfig(penalty=lam))
            ref = make_smoothing_spline(t, y, lam=lam)
            np.testing.assert_allclose(mine.fitted, ref(t), atol=1e-10)
            np.testing.assert_allclose(mine.derivative_at_knots(),
                                       ref.derivative()(t), atol=1e-10)

    def test_residuals_grow_with_penalty(self):
        rng = np.random.default_rng(4)
        t = np.arange(50.0)
        y = np.cos(0.2 * t) + rng.normal(0.0, 0.1, t.size)
        rss = []
        for lam in (0.0, 1.0, 10.0, 100.0, 1000.0):
            fit = fit_smoothing_spline(t, y, SplineConfig(penalty=lam))
            rss.append(float(np.sum((fit.fitted - y) ** 2)))
        assert all(a <= b + 1e-12 for a, b in zip(rss, rss[1:]))

    def test_huge_penalty_approaches_regression_line(self):
        rng = np.random.default_rng(5)
        t = np.arange(60.0)
        y = 0.5 + 0.1 * t + rng.normal(0.0, 0.3, t.size)
        fit = fit_smoothing_spline(t, y, SplineConfig(penalty=1e9))
        slope, intercept = np.polyfit(t, y, 1)
        np.testing.assert_allclose(fit.fitted, intercept + slope * t,
                                   atol=1e-3)

    def test_smooth_function_derivative_accuracy(self):
        t = np.linspace(0.0, 10.0, 120)
        y = np.sin(t)
        fit = fit_smoothing_spline(t, y, SplineConfig(penalty=1e-4))
        interior = slice(5, -5)
        rmse = np.sqrt(np.mean(
            (fit.derivative_at_knots()[interior] - np.cos(t)[interior]) ** 2
        ))
        assert rmse < 1e-3

    def test_evaluation_between_and_outside_knots(self):
        t = np.arange(20.0)
        y = (t - 10.0) ** 2 / 20.0
        fit = fit_smoothing_spline(t, y, SplineConfig(penalty=0.0))
        # Values at the knots reproduce the data.
        np.testing.assert_allclose(fit.value(t), y, atol=1e-8)
        # Between knots the spline stays close to the smooth generator.
        mid = t[:-1] + 0.5
        np.testing.assert_allclose(fit.value(mid),
                                   (mid - 10.0) ** 2 / 20.0, atol=0.05)
        # Outside the range extrapolation is linear: second differences
        # of equally spaced samples vanish.
        left = fit.value(np.array([-3.0, -2.0, -1.0]))
        second = left[0] - 2 * left[1] + left[2]
        assert second == pytest.approx(0.0, abs=1e-9)

    def test_needs_at_least_four_points(self):
        with pytest.raises(ValidationError):
            fit_smoothing_spline(np.arange(3.0), np.zeros(3),
                                 SplineConfig(penalty=1.0))

    def test_non_increasing_times_rejected(self):
        with pytest.raises(ValidationError):
            fit_smoothing_spline(np.array([0.0, 1.0, 1.0, 2.0]),
                                 np.zeros(4), SplineConfig(penalty=1.0))

    @given(
        intercept=st.floats(-3, 3),
        slope=st.floats(-2, 2),
        spar=st.floats(0, 1),
    )
    @settings(max_examples=40, deadline=None)
    def test_line_property(self, intercept, slope, spar):
        t = np.arange(25.0)
        y = intercept + slope * t
        fit = fit_smoothing_spline(t, y, SplineConfig(spar=spar))
        np.testing.assert_allclose(fit.fitted, y, atol=1e-8)


class TestSplineRows:
    def test_times_preserved_and_lengths_match(self):
        rng = np.random.default_rng(2)
        t = np.arange(35.0)
        y = rng.normal(size=35)
        u = rng.normal(size=35)
        rows = spline_rows(y, u, t, SplineConfig(spar=0.5))
        assert len(rows) == 35
        np.testing.assert_array_equal(rows.times, t)

    def test_zero_penalty_keeps_raw_excitation(self):
        rng = np.random.default_rng(3)
        t = np.arange(30.0)
        y = rng.normal(size=30)
        u = (t > 10).astype(float)
        rows = spline_rows(y, u, t, SplineConfig(penalty=0.0))
        np.testing.assert_allclose(rows.excitation, u, atol=1e-8)

    def test_excitation_filtered_like_signal(self):
        # Both columns go through the same smoother, so feeding the
        # excitation as the signal must give identical output.
        t = np.arange(50.0)
        u = ((t > 9) & (t < 20)).astype(float)
        cfg = SplineConfig(spar=0.6)
        rows = spline_rows(u, u, t, cfg)
        np.testing.assert_allclose(rows.excitation, rows.level, atol=1e-12)

    def test_linear_signal_slope_exact(self):
        t = np.arange(40.0)
        y = 2.0 + 0.25 * t
        rows = spline_rows(y, np.zeros_like(t), t, SplineConfig(spar=0.8))
        np.testing.assert_allclose(rows.slope, 0.25, atol=1e-10)
