"""Tests of excitation shapes, parameter draws and panel generation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfreg import (ExcitationShape, FirstOrderParams, Panel,
                     SimulationCondition, ValidationError,
                     draw_individual_params, generate_panel, integrate,
                     make_excitation)
from selfreg.simulate import IndividualSeries

from conftest import noiseless_condition


class TestExcitationShapes:
    def test_two_steps_blocks_for_fifty_points(self):
        u = make_excitation(ExcitationShape.two_steps(), 50)
        on = np.flatnonzero(u == 1.0)
        assert on.tolist() == list(range(10, 20)) + list(range(30, 40))

    def test_one_step_block_for_fifty_points(self):
        u = make_excitation(ExcitationShape.one_step(), 50)
        on = np.flatnonzero(u == 1.0)
        assert on.tolist() == list(range(10, 25))

    def test_ten_pulses_positions(self):
        u = make_excitation(ExcitationShape.pulses(10), 50)
        on = np.flatnonzero(u == 1.0)
        assert on.tolist() == [4, 9, 13, 18, 22, 27, 31, 36, 40, 45]

    @pytest.mark.parametrize("k", [3, 5, 10])
    def test_pulse_count_matches(self, k):
        u = make_excitation(ExcitationShape.pulses(k), 50)
        assert int(u.sum()) == k

    def test_excitation_is_binary(self):
        for shape in (ExcitationShape.two_steps(), ExcitationShape.one_step(),
                      ExcitationShape.pulses(5)):
            u = make_excitation(shape, 64)
            assert set(np.unique(u)) <= {0.0, 1.0}

    def test_label_round_trip(self):
        for shape in (ExcitationShape.two_steps(), ExcitationShape.one_step(),
                      ExcitationShape.pulses(3), ExcitationShape.pulses(10)):
            assert ExcitationShape.from_label(shape.label()) == shape

    def test_unknown_label_rejected(self):
        with pytest.raises(ValidationError):
            ExcitationShape.from_label("sawtooth")

    def test_too_short_series_rejected(self):
        with pytest.raises(ValidationError):
            make_excitation(ExcitationShape.two_steps(), 10)


class TestSimulationCondition:
    def test_defaults_are_reference_cell(self):
        c = SimulationCondition()
        assert c.decay_rate == pytest.approx(1.0 / 15.0)
        assert c.gain == 1.0
        assert c.equilibrium == 0.5
        assert c.shape == ExcitationShape.two_steps()
        assert (c.n_obs, c.n_indiv) == (50, 50)
        assert (c.stn_pct, c.sd_pct) == (30.0, 20.0)
        assert c.regression == "lmm"
        assert not c.homogeneous

    def test_mean_params_start_at_equilibrium(self):
        p = SimulationCondition().mean_params
        assert p.initial_value == p.equilibrium

    @pytest.mark.parametrize("kw", [
        {"decay_rate": 0.0},
        {"n_obs": 12},
        {"n_indiv": 0},
        {"stn_pct": -5.0},
        {"regression": "anova"},
    ])
    def test_rejects_invalid_fields(self, kw):
        with pytest.raises(ValidationError):
            SimulationCondition(**kw)

    def test_with_id_keeps_other_fields(self):
        c = SimulationCondition().with_id(9)
        assert c.condition_id == 9
        assert c.n_obs == 50


class TestDrawIndividualParams:
    def test_zero_spread_returns_means(self):
        mean = SimulationCondition().mean_params
        rng = np.random.default_rng(0)
        drawn = draw_individual_params(mean, 0.0, rng)
        assert drawn.decay_time == pytest.approx(mean.decay_time)
        assert drawn.gain == pytest.approx(mean.gain)
        assert drawn.equilibrium == pytest.approx(mean.equilibrium)

    def test_initial_value_is_drawn_equilibrium(self):
        mean = SimulationCondition().mean_params
        rng = np.random.default_rng(1)
        drawn = draw_individual_params(mean, 20.0, rng)
        assert drawn.initial_value == drawn.equilibrium

    def test_spread_matches_requested_percentage(self):
        mean = SimulationCondition().mean_params
        rng = np.random.default_rng(2)
        taus = np.array([
            draw_individual_params(mean, 20.0, rng).decay_time
            for _ in range(4000)
        ])
        assert taus.mean() == pytest.approx(15.0, rel=0.02)
        assert taus.std() == pytest.approx(3.0, rel=0.05)

    def test_impossible_redraw_bound_raises(self):
        # A mean decay time below the redraw floor cannot yield a valid
        # draw at zero spread.
        mean = FirstOrderParams.from_decay_time(0.5, gain=1.0,
                                                equilibrium=0.0)
        with pytest.raises(ValidationError):
            draw_individual_params(mean, 0.0, np.random.default_rng(0))


class TestGeneratePanel:
    def test_reproducible_bit_for_bit(self):
        c = SimulationCondition(n_indiv=5)
        a = generate_panel(c, 42)
        b = generate_panel(c, 42)
        for s1, s2 in zip(a, b):
            np.testing.assert_array_equal(s1.signal, s2.signal)
            np.testing.assert_array_equal(s1.signal_true, s2.signal_true)
            assert s1.params == s2.params

    def test_different_seeds_differ(self):
        c = SimulationCondition(n_indiv=3)
        a = generate_panel(c, 0)
        b = generate_panel(c, 1)
        assert not np.array_equal(a.individuals[0].signal,
                                  b.individuals[0].signal)

    def test_ids_are_one_based_and_unique(self):
        panel = generate_panel(SimulationCondition(n_indiv=7), 0)
        assert [s.individual_id for s in panel] == list(range(1, 8))

    def test_noiseless_signal_equals_exact_solution(self):
        panel = generate_panel(noiseless_condition(n_indiv=4), 3)
        u = make_excitation(ExcitationShape.two_steps(), 50)
        for s in panel:
            np.testing.assert_array_equal(s.signal, s.signal_true)
            expected = integrate(s.params, u, s.times)
            np.testing.assert_array_equal(s.signal_true, expected)

    def test_zero_spread_panel_shares_parameters(self):
        panel = generate_panel(SimulationCondition(sd_pct=0.0, n_indiv=4), 0)
        mean = SimulationCondition().mean_params
        for s in panel:
            assert s.params.decay_time == pytest.approx(mean.decay_time)
            assert s.params.gain == pytest.approx(mean.gain)

    def test_noise_scale_tracks_individual_amplitude(self):
        c = SimulationCondition(n_obs=400, n_indiv=30, stn_pct=30.0)
        panel = generate_panel(c, 8)
        ratios = []
        for s in panel:
            resid = s.signal - s.signal_true
            ratios.append(resid.std() / (np.ptp(s.signal_true) * 0.30))
        assert np.mean(ratios) == pytest.approx(1.0, abs=0.03)

    def test_truth_is_attached(self):
        panel = generate_panel(SimulationCondition(n_indiv=2), 0)
        assert panel.has_truth
        assert all(s.params is not None for s in panel)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=10, deadline=None)
    def test_any_seed_yields_full_panel(self, seed):
        panel = generate_panel(SimulationCondition(n_indiv=2), seed)
        assert len(panel) == 2
        assert all(np.all(np.isfinite(s.signal)) for s in panel)


class TestPanel:
    def test_duplicate_ids_rejected(self):
        s = IndividualSeries(individual_id=1, times=np.arange(3.0),
                             signal=np.zeros(3), excitation=np.zeros(3))
        t = IndividualSeries(individual_id=1, times=np.arange(3.0),
                             signal=np.zeros(3), excitation=np.zeros(3))
        with pytest.raises(ValidationError):
            Panel([s, t])

    def test_empty_panel_rejected(self):
        with pytest.raises(ValidationError):
            Panel([])

    def test_iteration_and_len(self):
        panel = generate_panel(SimulationCondition(n_indiv=3), 0)
        assert len(panel) == 3
        assert [s.individual_id for s in panel] == [1, 2, 3]
