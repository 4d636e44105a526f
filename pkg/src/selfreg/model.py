"""Continuous-time model of a self-regulated signal with known excitation.

The signal ``y(t)`` relaxes toward a moving attractor: without excitation
it decays exponentially to its equilibrium, and a constant excitation
``u`` shifts the attractor to ``equilibrium + gain * u``.  In rate form::

    dy/dt = -decay_rate * (y - equilibrium) + decay_rate * gain * u(t)

``decay_rate`` is the inverse of the decay time (the time after which
about 63% of the distance to the attractor has been covered).

Between consecutive time stamps the excitation is treated as linear
(values are connected by straight segments), which makes the integrator
exact: each step uses the closed-form solution for a linearly ramping
input, so no truncation error accumulates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "FirstOrderParams",
    "solve_homogeneous",
    "solve_step",
    "propagate_hold",
    "propagate_ramp",
    "integrate",
]


@dataclass(frozen=True)
class FirstOrderParams:
    """Parameters of one self-regulated individual.

    Parameters
    ----------
    decay_rate : float
        Relaxation rate toward the attractor, strictly positive.
        The reciprocal is the decay time, exposed as ``decay_time``.
    gain : float
        Steady-state change of the signal per unit of constant excitation.
    equilibrium : float
        Resting level reached without excitation.
    initial_value : float
        Signal value at the first time stamp.
    """

    decay_rate: float
    gain: float
    equilibrium: float
    initial_value: float = 0.0

    def __post_init__(self) -> None:
        for name in ("decay_rate", "gain", "equilibrium", "initial_value"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"{name} must be finite, got {v!r}")
        if self.decay_rate <= 0.0:
            raise ValidationError(
                f"decay_rate must be > 0, got {self.decay_rate!r}"
            )

    @property
    def decay_time(self) -> float:
        """Time constant 1 / decay_rate."""
        return 1.0 / self.decay_rate

    @classmethod
    def from_decay_time(cls, decay_time: float, gain: float,
                        equilibrium: float,
                        initial_value: float = 0.0) -> "FirstOrderParams":
        """Build parameters from a decay time instead of a rate."""
        if not math.isfinite(decay_time) or decay_time <= 0.0:
            raise ValidationError(
                f"decay_time must be finite and > 0, got {decay_time!r}"
            )
        return cls(decay_rate=1.0 / decay_time, gain=gain,
                   equilibrium=equilibrium, initial_value=initial_value)


def _check_times(times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValidationError("times must be a non-empty 1-d array")
    if not np.all(np.isfinite(times)):
        raise ValidationError("times must be finite")
    if times.size > 1 and not np.all(np.diff(times) > 0.0):
        raise ValidationError("times must be strictly increasing")
    return times


def solve_homogeneous(params: FirstOrderParams, times) -> np.ndarray:
    """Signal under zero excitation, starting at ``initial_value``.

    Exponential relaxation to the equilibrium:
    ``equilibrium + (initial_value - equilibrium) * exp(-decay_rate * t)``
    with time measured from the first entry of ``times``.
    """
    times = _check_times(times)
    t = times - times[0]
    return params.equilibrium + (
        params.initial_value - params.equilibrium
    ) * np.exp(-params.decay_rate * t)


def solve_step(params: FirstOrderParams, u_level: float, times) -> np.ndarray:
    """Signal under a constant excitation held at ``u_level``.

    The attractor sits at ``equilibrium + gain * u_level`` and the signal
    approaches it exponentially from ``initial_value``.
    """
    times = _check_times(times)
    if not math.isfinite(u_level):
        raise ValidationError(f"u_level must be finite, got {u_level!r}")
    t = times - times[0]
    target = params.equilibrium + params.gain * u_level
    return target + (params.initial_value - target) * np.exp(
        -params.decay_rate * t
    )


def propagate_hold(y: float, u_const: float, dt: float,
                   params: FirstOrderParams) -> float:
    """Advance the signal by ``dt`` under excitation held constant.

    Exact one-step update: the signal moves toward
    ``equilibrium + gain * u_const`` by the factor ``1 - exp(-decay_rate*dt)``.
    """
    if dt < 0.0 or not math.isfinite(dt):
        raise ValidationError(f"dt must be finite and >= 0, got {dt!r}")
    target = params.equilibrium + params.gain * u_const
    return target + (y - target) * math.exp(-params.decay_rate * dt)


def propagate_ramp(y: float, u_start: float, u_end: float, dt: float,
                   params: FirstOrderParams) -> float:
    """Advance the signal by ``dt`` while excitation ramps linearly.

    Closed-form solution for an input moving from ``u_start`` to ``u_end``
    at constant slope.  With zero slope this reduces to
    :func:`propagate_hold`.
    """
    if dt < 0.0 or not math.isfinite(dt):
        raise ValidationError(f"dt must be finite and >= 0, got {dt!r}")
    if dt == 0.0:
        return y
    g = params.decay_rate
    slope = (u_end - u_start) / dt
    # Particular solution tracking the ramp with a constant lag gain*slope/g.
    p0 = params.equilibrium + params.gain * (u_start - slope / g)
    p1 = params.equilibrium + params.gain * (u_end - slope / g)
    return p1 + (y - p0) * math.exp(-g * dt)


def integrate(params: FirstOrderParams, excitation, times) -> np.ndarray:
    """Signal trajectory at ``times`` for a sampled excitation.

    Parameters
    ----------
    params : FirstOrderParams
        Individual parameters; the trajectory starts at
        ``params.initial_value``.
    excitation : array_like
        Excitation sampled at ``times``; between stamps it is taken to
        vary linearly.
    times : array_like
        Strictly increasing time stamps.

    Returns
    -------
    numpy.ndarray
        Signal values, same length as ``times``.  Exact for this model:
        every step uses the closed-form ramp solution.
    """
    times = _check_times(times)
    u = np.asarray(excitation, dtype=float)
    if u.shape != times.shape:
        raise ValidationError(
            f"excitation shape {u.shape} does not match times shape "
            f"{times.shape}"
        )
    if not np.all(np.isfinite(u)):
        raise ValidationError("excitation must be finite")

    out = np.empty_like(times)
    out[0] = params.initial_value
    y = params.initial_value
    for i in range(times.size - 1):
        dt = times[i + 1] - times[i]
        y = propagate_ramp(y, u[i], u[i + 1], dt, params)
        out[i + 1] = y
    return out
