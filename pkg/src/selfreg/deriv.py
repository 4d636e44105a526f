"""Derivative estimation from noisy sampled signals.

Two families are provided, mirroring the two branches of the benchmark:

* a sliding-window local polynomial filter (time-delay embedding with
  least-squares weights), which returns one smoothed level and slope per
  window, and
* a natural cubic smoothing spline with a curvature penalty, evaluated
  at the original time stamps.

Both produce :class:`DerivativeRows`: aligned arrays of time, smoothed
level, slope and excitation ready for pooled regression.  The excitation
column receives the same treatment as the signal (window averaging, or
smoothing with the same penalty) so that both sides of the regression
pass through the same linear filter.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded

from .errors import EstimationError, ValidationError

__all__ = [
    "GllaConfig",
    "SplineConfig",
    "DerivativeRows",
    "glla_weights",
    "glla_rows",
    "SmoothingSpline",
    "fit_smoothing_spline",
    "spar_to_penalty",
    "spline_rows",
]

#: Relative spread of time steps beyond which the window filter warns
#: that it is approximating a non-uniform grid by its mean step.
UNIFORM_TOL = 0.10


@dataclass(frozen=True)
class GllaConfig:
    """Settings for the sliding-window filter.

    ``embedding`` is the window length in samples; the filter fits a
    straight line to each window, so at least two samples are needed.
    """

    embedding: int = 4

    def __post_init__(self) -> None:
        if not isinstance(self.embedding, (int, np.integer)):
            raise ValidationError(
                f"embedding must be an integer, got {self.embedding!r}"
            )
        if self.embedding < 2:
            raise ValidationError(
                f"embedding must be >= 2, got {self.embedding}"
            )


@dataclass(frozen=True)
class SplineConfig:
    """Settings for the smoothing spline.

    Exactly one of ``spar`` or ``penalty`` must be given.  ``spar`` is a
    normalized smoothing knob in [0, 1] mapped monotonically onto the
    curvature penalty (see :func:`spar_to_penalty`); ``penalty`` sets the
    curvature penalty directly, with 0 meaning exact interpolation.
    """

    spar: float | None = None
    penalty: float | None = None

    def __post_init__(self) -> None:
        if (self.spar is None) == (self.penalty is None):
            raise ValidationError(
                "exactly one of spar or penalty must be given"
            )
        if self.spar is not None:
            if not math.isfinite(self.spar) or not 0.0 <= self.spar <= 1.0:
                raise ValidationError(
                    f"spar must lie in [0, 1], got {self.spar!r}"
                )
        if self.penalty is not None:
            if not math.isfinite(self.penalty) or self.penalty < 0.0:
                raise ValidationError(
                    f"penalty must be >= 0, got {self.penalty!r}"
                )

    def resolve_penalty(self, times: np.ndarray) -> float:
        """Penalty to use on a given time grid."""
        if self.penalty is not None:
            return self.penalty
        return spar_to_penalty(self.spar, times)


@dataclass
class DerivativeRows:
    """Aligned level/slope/excitation rows produced by a derivative step."""

    times: np.ndarray
    level: np.ndarray
    slope: np.ndarray
    excitation: np.ndarray
    individual_id: int | None = None

    def __post_init__(self) -> None:
        n = self.times.shape
        for name in ("level", "slope", "excitation"):
            if getattr(self, name).shape != n:
                raise ValidationError(
                    f"{name} shape {getattr(self, name).shape} does not "
                    f"match times shape {n}"
                )

    def __len__(self) -> int:
        return self.times.size


def _as_series(signal, excitation, times):
    times = np.asarray(times, dtype=float)
    y = np.asarray(signal, dtype=float)
    u = np.asarray(excitation, dtype=float)
    if times.ndim != 1:
        raise ValidationError("times must be 1-d")
    if y.shape != times.shape or u.shape != times.shape:
        raise ValidationError("signal, excitation and times must have equal "
                              "lengths")
    if not (np.all(np.isfinite(times)) and np.all(np.isfinite(y))
            and np.all(np.isfinite(u))):
        raise ValidationError("signal, excitation and times must be finite")
    if times.size > 1 and not np.all(np.diff(times) > 0.0):
        raise ValidationError("times must be strictly increasing")
    return y, u, times


def glla_weights(embedding: int, dt: float) -> np.ndarray:
    """Least-squares level and slope weights for one sliding window.

    Builds the local design ``L`` with a constant column and a centred
    linear column in steps of ``dt``, and returns
    ``W = L (L'L)^{-1}`` of shape ``(embedding, 2)``: column 0 gives the
    window-centre level estimate, column 1 the slope estimate.  For
    ``embedding == 2`` the slope column reduces to a first difference.
    """
    if embedding < 2:
        raise ValidationError(f"embedding must be >= 2, got {embedding}")
    if not math.isfinite(dt) or dt <= 0.0:
        raise ValidationError(f"dt must be finite and > 0, got {dt!r}")
    v = np.arange(1, embedding + 1, dtype=float)
    offsets = dt * (v - v.mean())
    L = np.column_stack([np.ones(embedding), offsets])
    return L @ np.linalg.inv(L.T @ L)


def _mean_dt(times: np.ndarray) -> float:
    steps = np.diff(times)
    mean = float(steps.mean())
    spread = float(steps.max() - steps.min())
    if spread > UNIFORM_TOL * mean:
        warnings.warn(
            "time steps vary by more than "
            f"{UNIFORM_TOL:.0%} of the mean; window weights use the mean "
            "step and will be approximate",
            stacklevel=3,
        )
    return mean


def glla_rows(signal, excitation, times,
              config: GllaConfig) -> DerivativeRows:
    """Smoothed level and slope for every full sliding window.

    A window of ``config.embedding`` consecutive samples yields one row:
    the level and slope estimates at the window centre, the centre time,
    and the window mean of the excitation.  A series of length ``n``
    yields ``n - embedding + 1`` rows.
    """
    y, u, times = _as_series(signal, excitation, times)
    d = config.embedding
    if times.size < d:
        raise ValidationError(
            f"series length {times.size} is shorter than embedding {d}"
        )
    dt = _mean_dt(times)
    W = glla_weights(d, dt)
    n_rows = times.size - d + 1
    idx = np.arange(n_rows)[:, None] + np.arange(d)[None, :]
    windows_y = y[idx]
    return DerivativeRows(
        times=times[idx].mean(axis=1),
        level=windows_y @ W[:, 0],
        slope=windows_y @ W[:, 1],
        excitation=u[idx].mean(axis=1),
    )


def spar_to_penalty(spar: float, times) -> float:
    """Map the normalized smoothing knob onto a curvature penalty.

    The map is exponential in ``spar`` (three octaves of 256 across the
    unit interval) and scaled by the cube of the mean time step, so that
    a given ``spar`` selects a comparable effective roughness across
    grids: ``256**(3*spar - 1) * ((t_max - t_min) / n)**3``.
    """
    if not math.isfinite(spar):
        raise ValidationError(f"spar must be finite, got {spar!r}")
    times = np.asarray(times, dtype=float)
    span = float(times[-1] - times[0])
    if span <= 0.0:
        raise ValidationError("times must span a positive range")
    return 256.0 ** (3.0 * spar - 1.0) * (span / times.size) ** 3


class SmoothingSpline:
    """Natural cubic smoothing spline fitted to one series.

    Minimizes the penalized least squares criterion
    ``sum (y_i - s(t_i))^2 + penalty * integral s''(x)^2 dx`` over natural
    cubic splines with knots at the data times.  With ``penalty == 0``
    the fit interpolates the data.  Outside the data range the spline
    continues linearly (its second derivative is zero at the ends).
    """

    def __init__(self, times: np.ndarray, fitted: np.ndarray,
                 second_derivs: np.ndarray):
        self.times = times
        self.fitted = fitted
        self.second_derivs = second_derivs

    def derivative_at_knots(self) -> np.ndarray:
        """First derivative of the spline at every knot."""
        t, f, m = self.times, self.fitted, self.second_derivs
        h = np.diff(t)
        d = np.empty_like(f)
        d[:-1] = (f[1:] - f[:-1]) / h - h * m[:-1] / 3.0 - h * m[1:] / 6.0
        d[-1] = (f[-1] - f[-2]) / h[-1] + h[-1] * m[-2] / 6.0 \
            + h[-1] * m[-1] / 3.0
        return d

    def _locate(self, x: np.ndarray) -> np.ndarray:
        i = np.searchsorted(self.times, x, side="right") - 1
        return np.clip(i, 0, self.times.size - 2)

    def value(self, x) -> np.ndarray:
        """Spline value at arbitrary points (linear outside the range)."""
        x = np.asarray(x, dtype=float)
        t, f, m = self.times, self.fitted, self.second_derivs
        i = self._locate(x)
        h = t[i + 1] - t[i]
        a = (t[i + 1] - x) / h
        b = (x - t[i]) / h
        inner = (
            a * f[i] + b * f[i + 1]
            + ((a ** 3 - a) * m[i] + (b ** 3 - b) * m[i + 1]) * h ** 2 / 6.0
        )
        lo, hi = t[0], t[-1]
        out_lo = x < lo
        out_hi = x > hi
        if np.any(out_lo) or np.any(out_hi):
            d = self.derivative_at_knots()
            inner = np.where(out_lo, f[0] + (x - lo) * d[0], inner)
            inner = np.where(out_hi, f[-1] + (x - hi) * d[-1], inner)
        return inner

    def derivative(self, x) -> np.ndarray:
        """Spline first derivative at arbitrary points."""
        x = np.asarray(x, dtype=float)
        t, f, m = self.times, self.fitted, self.second_derivs
        i = self._locate(x)
        h = t[i + 1] - t[i]
        a = (t[i + 1] - x) / h
        b = (x - t[i]) / h
        inner = (
            (f[i + 1] - f[i]) / h
            + ((3.0 * b ** 2 - 1.0) * m[i + 1]
               - (3.0 * a ** 2 - 1.0) * m[i]) * h / 6.0
        )
        lo, hi = t[0], t[-1]
        out_lo = x < lo
        out_hi = x > hi
        if np.any(out_lo) or np.any(out_hi):
            d = self.derivative_at_knots()
            inner = np.where(out_lo, d[0], inner)
            inner = np.where(out_hi, d[-1], inner)
        return inner


def fit_smoothing_spline(times, values,
                         config: SplineConfig) -> SmoothingSpline:
    """Fit a natural cubic smoothing spline to one series.

    Solves the banded normal equations of the classic two-band
    formulation: second derivatives at interior knots from
    ``(R + penalty * Q'Q) g = Q'y``, then fitted values
    ``f = y - penalty * Q g``.  Requires at least four strictly
    increasing time stamps.
    """
    times = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if times.ndim != 1 or y.shape != times.shape:
        raise ValidationError("times and values must be 1-d of equal length")
    if times.size < 4:
        raise ValidationError(
            f"need at least 4 points for a smoothing spline, got {times.size}"
        )
    if not np.all(np.diff(times) > 0.0):
        raise ValidationError("times must be strictly increasing without "
                              "duplicates")
    if not (np.all(np.isfinite(times)) and np.all(np.isfinite(y))):
        raise ValidationError("times and values must be finite")
    lam = config.resolve_penalty(times)

    n = times.size
    h = np.diff(times)
    ih = 1.0 / h
    # Columns of the second-difference operator Q (n rows, n-2 columns).
    c0 = ih[:-1]
    c1 = -(ih[:-1] + ih[1:])
    c2 = ih[1:]
    qty = c0 * y[:-2] + c1 * y[1:-1] + c2 * y[2:]

    # Upper banded storage of R + lam * Q'Q (bandwidth 2, symmetric PD).
    ab = np.zeros((3, n - 2))
    ab[2, :] = (h[:-1] + h[1:]) / 3.0 + lam * (c0 ** 2 + c1 ** 2 + c2 ** 2)
    ab[1, 1:] = h[1:-1] / 6.0 + lam * (c1[:-1] * c0[1:] + c2[:-1] * c1[1:])
    ab[0, 2:] = lam * c2[:-2] * c0[2:]
    try:
        g = solveh_banded(ab, qty, lower=False)
    except np.linalg.LinAlgError as exc:
        raise EstimationError(
            f"smoothing spline system not positive definite: {exc}"
        ) from exc

    m = np.zeros(n)
    m[1:-1] = g
    qg = np.zeros(n)
    qg[:-2] += c0 * g
    qg[1:-1] += c1 * g
    qg[2:] += c2 * g
    return SmoothingSpline(times=times, fitted=y - lam * qg, second_derivs=m)


def spline_rows(signal, excitation, times,
                config: SplineConfig) -> DerivativeRows:
    """Spline level and slope at the original time stamps.

    The signal is smoothed with the configured penalty; level and slope
    are the spline value and first derivative at every stamp.  The
    excitation is smoothed with the same penalty and evaluated at the
    same stamps, so both regression sides pass through the same filter
    (with penalty 0 the excitation column equals the raw excitation).
    """
    y, u, times = _as_series(signal, excitation, times)
    lam = config.resolve_penalty(times)
    resolved = SplineConfig(penalty=lam)
    fit_y = fit_smoothing_spline(times, y, resolved)
    fit_u = fit_smoothing_spline(times, u, resolved)
    return DerivativeRows(
        times=times.copy(),
        level=fit_y.fitted.copy(),
        slope=fit_y.derivative_at_knots(),
        excitation=fit_u.fitted.copy(),
    )
