"""Shared fixtures and oracles for the test suite."""

import numpy as np
import pytest

from selfreg import (FirstOrderParams, Panel, SimulationCondition,
                     generate_panel)
from selfreg.simulate import IndividualSeries


def rk4_integrate(params: FirstOrderParams, excitation, times,
                  substeps: int = 64) -> np.ndarray:
    """Reference integrator: classic fixed-step Runge-Kutta 4.

    The excitation is interpolated linearly between samples, matching
    the generator's forcing model, and each sampling interval is split
    into ``substeps`` RK4 steps so the truncation error sits far below
    the comparison tolerances used in the tests.
    """
    times = np.asarray(times, dtype=float)
    u = np.asarray(excitation, dtype=float)
    g, K, yeq = params.decay_rate, params.gain, params.equilibrium

    def rhs(t, y, t0, t1, u0, u1):
        if t1 == t0:
            ut = u0
        else:
            ut = u0 + (u1 - u0) * (t - t0) / (t1 - t0)
        return -g * (y - yeq) + g * K * ut

    out = np.empty_like(times)
    out[0] = y = params.initial_value
    for i in range(times.size - 1):
        t0, t1 = times[i], times[i + 1]
        h = (t1 - t0) / substeps
        t = t0
        for _ in range(substeps):
            k1 = rhs(t, y, t0, t1, u[i], u[i + 1])
            k2 = rhs(t + h / 2, y + h / 2 * k1, t0, t1, u[i], u[i + 1])
            k3 = rhs(t + h / 2, y + h / 2 * k2, t0, t1, u[i], u[i + 1])
            k4 = rhs(t + h, y + h * k3, t0, t1, u[i], u[i + 1])
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        out[i + 1] = y
    return out


def noiseless_condition(**overrides) -> SimulationCondition:
    """Reference condition with all randomness switched off."""
    kw = {"stn_pct": 0.0, "sd_pct": 0.0}
    kw.update(overrides)
    return SimulationCondition(**kw)


def series_from_params(params: FirstOrderParams, excitation,
                       times=None, individual_id: int = 1,
                       rng=None, noise_sd: float = 0.0):
    """One individual's series from explicit parameters.

    Without an ``rng`` the signal is the exact noiseless solution.
    """
    from selfreg import integrate

    u = np.asarray(excitation, dtype=float)
    if times is None:
        times = np.arange(u.size, dtype=float)
    clean = integrate(params, u, times)
    signal = clean.copy()
    if rng is not None and noise_sd > 0.0:
        signal = clean + rng.normal(0.0, noise_sd, clean.size)
    return IndividualSeries(
        individual_id=individual_id, times=np.asarray(times, dtype=float),
        signal=signal, excitation=u, signal_true=clean, params=params,
    )


@pytest.fixture(scope="session")
def reference_panel() -> Panel:
    """One noisy reference-condition panel, shared across tests."""
    return generate_panel(SimulationCondition(), seed=0)


@pytest.fixture(scope="session")
def noiseless_panel() -> Panel:
    """Noiseless, homogeneous-individuals reference panel."""
    return generate_panel(noiseless_condition(), seed=0)
