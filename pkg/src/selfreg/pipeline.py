"""Two-step estimation pipeline and smoothing selection.

Step one turns each observed series into level/slope/excitation rows
(sliding-window filter or smoothing spline); step two pools the rows and
regresses slope on level and excitation.  The regression coefficients
map back to model parameters:

* decay rate  = minus the level coefficient,
* gain        = excitation coefficient / decay rate,
* equilibrium = intercept / decay rate.

Model fit is judged by reconstruction: integrate the estimated model
from each individual's first observed value and compare with the data.
The smoothing hyperparameter (window length or spline knob) is chosen by
maximizing that reconstruction R-squared against the observed signal,
which requires no knowledge of the truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .deriv import (DerivativeRows, GllaConfig, SplineConfig, glla_rows,
                    spline_rows)
from .errors import EstimationError, SelfRegError, ValidationError
from .model import FirstOrderParams, integrate
from .regress import RegressionData, RegressionFit, fit_regression
from .simulate import IndividualSeries, Panel

__all__ = [
    "DerivConfig",
    "method_family",
    "compute_rows",
    "IndividualEstimate",
    "FitResult",
    "two_step_fit",
    "r_squared",
    "SmoothingSearch",
    "TracePoint",
    "optimize_smoothing",
    "default_grid",
    "make_config",
]

DerivConfig = GllaConfig | SplineConfig

#: Level coefficients smaller than this (in absolute value) make the
#: back-transform to gain and equilibrium numerically meaningless.
_MIN_LEVEL_COEF = 1e-8


def method_family(config: DerivConfig) -> str:
    """'glla' for the window filter, 'spline' for the smoothing spline."""
    if isinstance(config, GllaConfig):
        return "glla"
    if isinstance(config, SplineConfig):
        return "spline"
    raise ValidationError(f"unknown derivative config {config!r}")


def compute_rows(panel: Panel, config: DerivConfig) -> list[DerivativeRows]:
    """Derivative rows for every individual in a panel."""
    rows = []
    for s in panel:
        if method_family(config) == "glla":
            r = glla_rows(s.signal, s.excitation, s.times, config)
        else:
            r = spline_rows(s.signal, s.excitation, s.times, config)
        r.individual_id = s.individual_id
        rows.append(r)
    return rows


@dataclass
class IndividualEstimate:
    """Back-transformed parameters for one individual (mixed model only)."""

    individual_id: int
    decay_rate: float
    gain: float
    equilibrium: float
    valid: bool
    note: str = ""

    @property
    def decay_time(self) -> float:
        return 1.0 / self.decay_rate if self.decay_rate > 0 else math.nan


@dataclass
class FitResult:
    """Everything produced by one run of the two-step procedure."""

    config: DerivConfig
    regression: RegressionFit
    homogeneous: bool
    decay_rate: float
    decay_rate_ci: tuple[float, float]
    eq_coef: float
    eq_coef_ci: tuple[float, float]
    gain_coef: float | None
    gain_coef_ci: tuple[float, float] | None
    gain: float
    equilibrium: float
    r2_observed: float
    fitted: dict[int, np.ndarray]
    fitted_individual: dict[int, np.ndarray] | None
    individual_estimates: list[IndividualEstimate] | None
    note: str = ""

    @property
    def decay_time(self) -> float:
        return 1.0 / self.decay_rate if self.decay_rate > 0 else math.nan


def _structural(eq_coef: float, level_coef: float,
                gain_coef: float | None):
    """Map regression coefficients to (decay_rate, gain, equilibrium)."""
    decay = -level_coef
    if abs(level_coef) < _MIN_LEVEL_COEF or decay <= 0.0:
        return decay, math.nan, math.nan
    gain = (gain_coef / decay) if gain_coef is not None else 0.0
    return decay, gain, eq_coef / decay


def _reconstruct(series: IndividualSeries, decay: float, gain: float,
                 equilibrium: float) -> np.ndarray:
    params = FirstOrderParams(
        decay_rate=decay, gain=gain, equilibrium=equilibrium,
        initial_value=float(series.signal[0]),
    )
    return integrate(params, series.excitation, series.times)


def r_squared(fitted: dict[int, np.ndarray], panel: Panel,
              target: str = "observed") -> float:
    """Pooled reconstruction R-squared over a panel.

    ``target`` selects the comparison signal: the observed (noisy)
    series, or the noiseless truth when the panel carries it.  Residual
    and total sums of squares are pooled over all individuals, with the
    total taken about the grand mean of the target.
    """
    if target not in ("observed", "noiseless"):
        raise ValidationError(
            f"target must be 'observed' or 'noiseless', got {target!r}"
        )
    refs, fits = [], []
    for s in panel:
        if s.individual_id not in fitted:
            continue
        ref = s.signal if target == "observed" else s.signal_true
        if ref is None:
            raise ValidationError(
                "panel has no noiseless truth to compare against"
            )
        refs.append(np.asarray(ref, dtype=float))
        fits.append(np.asarray(fitted[s.individual_id], dtype=float))
    if not refs:
        raise ValidationError("no fitted trajectories match the panel")
    ref = np.concatenate(refs)
    fit = np.concatenate(fits)
    sst = float(np.sum((ref - ref.mean()) ** 2))
    if sst == 0.0:
        raise EstimationError(
            "target signal is constant; R-squared is undefined"
        )
    sse = float(np.sum((ref - fit) ** 2))
    return 1.0 - sse / sst


def two_step_fit(panel: Panel, config: DerivConfig,
                 regression: str = "lmm", homogeneous: bool = False,
                 **fit_kwargs) -> FitResult:
    """Run both steps on one panel and package the results.

    With ``homogeneous=True`` the excitation column is dropped from the
    regression, which estimates a freely relaxing model (gain fixed at
    zero).  Reconstructions start every individual at its first observed
    value; with the mixed model, per-individual curves add the predicted
    random deviations to the fixed coefficients.
    """
    rows = compute_rows(panel, config)
    data = RegressionData.from_rows(rows,
                                    include_excitation=not homogeneous)
    fit = fit_regression(data, method=regression, **fit_kwargs)
    b0 = fit.coef_by_name("intercept")
    b1 = fit.coef_by_name("level")
    b2 = fit.coef_by_name("excitation") if not homogeneous else None
    decay, gain, equilibrium = _structural(b0, b1, b2)

    i1 = fit.columns.index("level")
    decay_ci = (-fit.ci_high[i1], -fit.ci_low[i1])
    i0 = fit.columns.index("intercept")
    eq_ci = (fit.ci_low[i0], fit.ci_high[i0])
    if homogeneous:
        gain_coef, gain_ci = None, None
    else:
        i2 = fit.columns.index("excitation")
        gain_coef = b2
        gain_ci = (fit.ci_low[i2], fit.ci_high[i2])

    note = ""
    fitted: dict[int, np.ndarray] = {}
    fitted_indiv: dict[int, np.ndarray] | None = None
    estimates: list[IndividualEstimate] | None = None
    r2_obs = math.nan
    if math.isfinite(gain):
        for s in panel:
            fitted[s.individual_id] = _reconstruct(s, decay, gain,
                                                   equilibrium)
        r2_obs = r_squared(fitted, panel, target="observed")
    else:
        note = ("level coefficient is not negative; decay rate has the "
                "wrong sign and derived parameters are undefined")

    if fit.random_effects is not None:
        estimates = []
        fitted_indiv = {}
        for s in panel:
            re = fit.random_effects.get(s.individual_id)
            if re is None:
                continue
            e0 = b0 + re[i0]
            e1 = b1 + re[i1]
            e2 = (b2 + re[fit.columns.index("excitation")]) \
                if not homogeneous else None
            d_i, g_i, q_i = _structural(e0, e1, e2)
            ok = math.isfinite(g_i)
            estimates.append(IndividualEstimate(
                individual_id=s.individual_id, decay_rate=d_i, gain=g_i,
                equilibrium=q_i, valid=ok,
                note="" if ok else "level coefficient not negative",
            ))
            if ok:
                fitted_indiv[s.individual_id] = _reconstruct(s, d_i, g_i,
                                                             q_i)

    return FitResult(
        config=config, regression=fit, homogeneous=homogeneous,
        decay_rate=decay, decay_rate_ci=decay_ci,
        eq_coef=b0, eq_coef_ci=eq_ci,
        gain_coef=gain_coef, gain_coef_ci=gain_ci,
        gain=gain, equilibrium=equilibrium,
        r2_observed=r2_obs, fitted=fitted,
        fitted_individual=fitted_indiv,
        individual_estimates=estimates, note=note,
    )


@dataclass
class TracePoint:
    """One evaluated candidate in a smoothing search."""

    value: float
    r2: float
    error: str = ""


@dataclass
class SmoothingSearch:
    """Outcome of a smoothing hyperparameter search."""

    family: str
    chosen: DerivConfig
    chosen_r2: float
    trace: list[TracePoint]
    fit: FitResult


def default_grid(family: str, n_obs: int) -> list[float]:
    """Default candidate values for a family on a series of ``n_obs``."""
    if family == "glla":
        return [d for d in range(2, 25, 2) if n_obs - d + 1 >= 3]
    if family == "spline":
        return [round(0.2 * k, 10) for k in range(6)]
    raise ValidationError(f"family must be 'glla' or 'spline', got "
                          f"{family!r}")


def make_config(family: str, value: float) -> DerivConfig:
    if family == "glla":
        return GllaConfig(embedding=int(value))
    return SplineConfig(spar=float(value))


def optimize_smoothing(panel: Panel, family: str,
                       regression: str = "lmm", homogeneous: bool = False,
                       grid: list[float] | None = None,
                       **fit_kwargs) -> SmoothingSearch:
    """Pick the smoothing hyperparameter by reconstruction R-squared.

    Evaluates every candidate with a full two-step fit and keeps the one
    whose fixed-coefficient reconstruction best matches the observed
    signal.  Ties go to the smaller candidate.  When no explicit
    ``grid`` is given, the spline family refines around the best coarse
    candidate with a second, finer pass; failed candidates are recorded
    in the trace and skipped.

    A homogeneous fit reconstructs nothing the excitation can explain,
    so its own R-squared cannot judge smoothing.  When the panel has a
    nonzero excitation the candidates are therefore scored with the
    full model and only the final fit at the chosen value drops the
    excitation term.
    """
    if family not in ("glla", "spline"):
        raise ValidationError(f"family must be 'glla' or 'spline', got "
                              f"{family!r}")
    score_homogeneous = homogeneous and not any(
        np.any(s.excitation != 0.0) for s in panel)
    n_obs = min(len(s.times) for s in panel)
    refine = grid is None and family == "spline"
    values = list(grid) if grid is not None else default_grid(family, n_obs)
    if not values:
        raise ValidationError("smoothing grid is empty")

    trace: list[TracePoint] = []
    fits: dict[float, FitResult] = {}

    def evaluate(candidates):
        for v in candidates:
            cfg = make_config(family, v)
            try:
                res = two_step_fit(panel, cfg, regression=regression,
                                   homogeneous=score_homogeneous,
                                   **fit_kwargs)
            except SelfRegError as exc:
                trace.append(TracePoint(value=float(v), r2=math.nan,
                                        error=str(exc)))
                continue
            if not math.isfinite(res.r2_observed):
                trace.append(TracePoint(value=float(v), r2=math.nan,
                                        error=res.note or "non-finite fit"))
                continue
            trace.append(TracePoint(value=float(v), r2=res.r2_observed))
            fits[float(v)] = res

    evaluate(values)
    if refine and fits:
        best = _argbest(fits)
        extra = [round(best + dv, 10) for dv in
                 (-0.18, -0.09, 0.09, 0.18)]
        seen = {p.value for p in trace}
        extra = [v for v in extra if 0.0 <= v <= 1.0 and v not in seen]
        evaluate(extra)

    if not fits:
        detail = "; ".join(
            f"{p.value:g}: {p.error}" for p in trace if p.error
        )
        raise EstimationError(
            f"every smoothing candidate failed ({detail})"
        )
    best = _argbest(fits)
    trace.sort(key=lambda p: p.value)
    chosen_fit = fits[best]
    if homogeneous and not score_homogeneous:
        chosen_fit = two_step_fit(panel, make_config(family, best),
                                  regression=regression, homogeneous=True,
                                  **fit_kwargs)
    return SmoothingSearch(
        family=family, chosen=make_config(family, best),
        chosen_r2=fits[best].r2_observed, trace=trace, fit=chosen_fit,
    )


def _argbest(fits: dict[float, FitResult]) -> float:
    """Candidate with the highest R-squared; ties go to the smallest."""
    return min(fits, key=lambda v: (-fits[v].r2_observed, v))
