"""Pooled panel regressions of slope on level and excitation.

The second stage of the two-step procedure regresses estimated slopes on
smoothed levels and excitation across all individuals.  Three estimators
share one input/output contract:

* ``ols``: pooled least squares, no individual structure;
* ``lmm``: linear mixed model with a random intercept, level slope and
  excitation slope per individual, fitted by profiled restricted
  maximum likelihood;
* ``gee``: generalized estimating equations with an exchangeable
  working correlation per individual and robust sandwich errors.

The mixed model is the workhorse: between-individual spread in
equilibria and decay rates otherwise leaks into the pooled slope
coefficients and biases them heavily.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .deriv import DerivativeRows
from .errors import ConvergenceError, EstimationError, ValidationError

__all__ = [
    "RegressionData",
    "RegressionFit",
    "fit_ols",
    "fit_lmm",
    "fit_gee",
    "fit_regression",
]

_Z975 = float(norm.ppf(0.975))

#: Relative rank tolerance used when checking the pooled design matrix.
_RANK_TOL = 1e-10


@dataclass
class RegressionData:
    """Pooled design for the slope regression, grouped by individual."""

    X: np.ndarray
    y: np.ndarray
    group_ids: list[int]
    group_sizes: np.ndarray
    columns: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or self.y.ndim != 1:
            raise ValidationError("X must be 2-d and y 1-d")
        if self.X.shape[0] != self.y.size:
            raise ValidationError("X and y must have the same number of rows")
        if int(self.group_sizes.sum()) != self.y.size:
            raise ValidationError("group sizes must sum to the number of rows")
        if self.X.shape[1] != len(self.columns):
            raise ValidationError("column names must match X's width")

    @property
    def n_groups(self) -> int:
        return len(self.group_ids)

    @property
    def n_params(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_rows(cls, rows: list[DerivativeRows],
                  include_excitation: bool = True) -> "RegressionData":
        """Stack per-individual derivative rows into one pooled design.

        Columns are an intercept, the smoothed level, and (unless
        ``include_excitation`` is false) the aligned excitation.  The
        response is the estimated slope.
        """
        if not rows:
            raise ValidationError("need at least one individual's rows")
        blocks, ys, ids, sizes = [], [], [], []
        for k, r in enumerate(rows):
            if len(r) == 0:
                continue
            cols = [np.ones(len(r)), r.level]
            if include_excitation:
                cols.append(r.excitation)
            blocks.append(np.column_stack(cols))
            ys.append(r.slope)
            ids.append(r.individual_id if r.individual_id is not None
                       else k + 1)
            sizes.append(len(r))
        if not blocks:
            raise ValidationError("all individuals have empty rows")
        if len(set(ids)) != len(ids):
            raise ValidationError("individual ids must be unique")
        names = ("intercept", "level", "excitation")[:2 + include_excitation]
        return cls(
            X=np.vstack(blocks), y=np.concatenate(ys), group_ids=ids,
            group_sizes=np.asarray(sizes, dtype=int), columns=names,
        )


@dataclass
class RegressionFit:
    """Common result type of the three pooled estimators."""

    method: str
    columns: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    resid_var: float
    n_obs: int
    n_groups: int
    converged: bool = True
    n_iter: int = 0
    deviance: float | None = None
    cov_re: np.ndarray | None = None
    random_effects: dict[int, np.ndarray] | None = field(default=None,
                                                         repr=False)
    corr: float | None = None
    boundary: bool = False

    def coef_by_name(self, name: str) -> float:
        try:
            return float(self.coef[self.columns.index(name)])
        except ValueError:
            raise KeyError(name) from None


def _check_design(data: RegressionData) -> None:
    X = data.X
    # Rank check with named diagnostics so degenerate panels fail loudly.
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= _RANK_TOL * sv[0]:
        details = []
        for j, name in enumerate(data.columns):
            if name != "intercept" and np.ptp(X[:, j]) == 0.0:
                details.append(f"column '{name}' is constant")
        hint = "; ".join(details) if details else \
            "columns are linearly dependent"
        raise EstimationError(
            f"design matrix is rank deficient: {hint}"
        )
    if np.ptp(data.y) == 0.0:
        raise EstimationError("slope response has zero variance")


def _wald(coef: np.ndarray, vcov: np.ndarray):
    se = np.sqrt(np.maximum(np.diag(vcov), 0.0))
    return se, coef - _Z975 * se, coef + _Z975 * se


def fit_ols(data: RegressionData) -> RegressionFit:
    """Pooled least squares with classical standard errors."""
    _check_design(data)
    X, y = data.X, data.y
    n, p = X.shape
    if n <= p:
        raise EstimationError(
            f"too few rows ({n}) for {p} coefficients"
        )
    coef, rss, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    s2 = float(resid @ resid) / (n - p)
    vcov = s2 * np.linalg.inv(X.T @ X)
    se, lo, hi = _wald(coef, vcov)
    return RegressionFit(
        method="ols", columns=data.columns, coef=coef, se=se,
        ci_low=lo, ci_high=hi, resid_var=s2, n_obs=n,
        n_groups=data.n_groups,
    )


def _split_groups(data: RegressionData):
    ends = np.cumsum(data.group_sizes)
    starts = ends - data.group_sizes
    return [(data.X[a:b], data.y[a:b]) for a, b in zip(starts, ends)]


class _RemlProblem:
    """Profiled restricted likelihood over the relative covariance factor.

    Random effects share the fixed-effect columns.  Their covariance is
    parameterized as ``sigma^2 * Lam @ Lam.T`` with ``Lam`` lower
    triangular (entries are the free parameters), which keeps the
    covariance positive semidefinite and profiles out both the fixed
    effects and the residual variance.  All per-group quantities are
    batched, so one deviance evaluation is a handful of vectorized
    (groups, p, p) operations.
    """

    def __init__(self, data: RegressionData):
        groups = _split_groups(data)
        p = data.n_params
        self.p = p
        self.n = data.y.size
        self.A = np.stack([X.T @ X for X, _ in groups])
        self.c = np.stack([X.T @ y for X, y in groups])
        self.s = np.array([y @ y for _, y in groups])
        self.tril = np.tril_indices(p)
        self.eye = np.eye(p)

    def unpack(self, theta: np.ndarray) -> np.ndarray:
        lam = np.zeros((self.p, self.p))
        lam[self.tril] = theta
        return lam

    def _assemble(self, lam: np.ndarray):
        """Sufficient statistics of the profiled problem at one Lam."""
        LtA = np.einsum("ba,gbc->gac", lam, self.A)
        M = self.eye + LtA @ lam
        chol = np.linalg.cholesky(M)
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)))
        Z = np.linalg.solve(M, LtA)
        Ltc = np.einsum("ba,gb->ga", lam, self.c)
        z = np.linalg.solve(M, Ltc[..., None])[..., 0]
        XtViX = self.A.sum(axis=0) - np.einsum("gka,gkb->ab", LtA, Z)
        XtViy = self.c.sum(axis=0) - np.einsum("gka,gk->a", LtA, z)
        ytViy = self.s.sum() - np.einsum("ga,ga->", Ltc, z)
        return logdet, XtViX, XtViy, ytViy

    def deviance(self, theta: np.ndarray) -> float:
        try:
            logdet, XtViX, XtViy, ytViy = self._assemble(self.unpack(theta))
            beta = np.linalg.solve(XtViX, XtViy)
            sign, logdet_X = np.linalg.slogdet(XtViX)
            if sign <= 0:
                return 1e12
        except np.linalg.LinAlgError:
            return 1e12
        r2 = ytViy - beta @ XtViy
        dof = self.n - self.p
        if not np.isfinite(r2) or r2 <= 0.0:
            return 1e12
        return float(
            logdet + logdet_X + dof * (1.0 + np.log(2.0 * np.pi * r2 / dof))
        )

    def finalize(self, theta: np.ndarray, data: RegressionData):
        """Fixed effects, covariances and per-group effects at the optimum."""
        lam = self.unpack(theta)
        logdet, XtViX, XtViy, ytViy = self._assemble(lam)
        try:
            beta = np.linalg.solve(XtViX, XtViy)
        except np.linalg.LinAlgError:
            beta = np.linalg.lstsq(XtViX, XtViy, rcond=None)[0]
        r2 = max(float(ytViy - beta @ XtViy), 0.0)
        dof = self.n - self.p
        sigma2 = r2 / dof
        try:
            vcov = sigma2 * np.linalg.inv(XtViX)
        except np.linalg.LinAlgError:
            vcov = sigma2 * np.linalg.pinv(XtViX)
        G_rel = lam @ lam.T
        # Best linear predictions of the per-group deviations.
        w = self.c - np.einsum("gab,b->ga", self.A, beta)
        LtA = np.einsum("ba,gbc->gac", lam, self.A)
        M = self.eye + LtA @ lam
        Ltw = np.einsum("ba,gb->ga", lam, w)
        sol = np.linalg.solve(M, Ltw[..., None])[..., 0]
        q = w - np.einsum("gka,gk->ga", LtA, sol)
        blups = q @ G_rel.T
        re = {gid: blups[k] for k, gid in enumerate(data.group_ids)}
        return beta, vcov, sigma2, sigma2 * G_rel, re


def fit_lmm(data: RegressionData, max_iter: int = 500,
            f_tol: float = 1e-8) -> RegressionFit:
    """Random-coefficients mixed model by profiled restricted likelihood.

    Every individual gets random deviations on all fixed-effect columns
    with an unstructured covariance.  The profiled objective depends
    only on the relative covariance factor, which a Nelder-Mead search
    optimizes until the relative deviance change falls below ``f_tol``
    (or ``max_iter`` simplex iterations, raising
    :class:`ConvergenceError`).
    """
    _check_design(data)
    if data.n_groups < 2:
        raise EstimationError(
            "mixed model needs at least 2 individuals; "
            "use the pooled 'ols' method for a single series"
        )
    if data.y.size <= data.n_params:
        raise EstimationError("too few rows for the mixed model")
    prob = _RemlProblem(data)
    theta0 = np.zeros(len(prob.tril[0]))
    diag_pos = np.cumsum(np.arange(1, prob.p + 1)) - 1
    theta0[diag_pos] = np.sqrt(0.1)
    d0 = prob.deviance(theta0)
    options = {
        "maxiter": max_iter,
        "maxfev": 100 * max_iter,
        "xatol": np.inf,
        "fatol": f_tol * max(1.0, abs(d0)),
    }
    res = minimize(prob.deviance, theta0, method="Nelder-Mead",
                   options=options)
    n_iter = int(res.nit)
    if not res.success:
        # A fresh simplex around the incumbent often rescues a stalled
        # search; one deterministic restart, then give up.
        res = minimize(prob.deviance, res.x, method="Nelder-Mead",
                       options=options)
        n_iter += int(res.nit)
    if not res.success:
        raise ConvergenceError(
            "mixed model did not converge in "
            f"{n_iter} simplex iterations",
            deviance=float(res.fun), n_iter=n_iter,
        )
    # The simplex can stall a few deviance units short of the optimum on
    # flat criteria; a directional polish from the incumbent is cheap and
    # deterministic.
    polish = minimize(prob.deviance, res.x, method="Powell",
                      options={"xtol": 1e-8, "ftol": 1e-10,
                               "maxiter": max_iter})
    if polish.fun < res.fun:
        res = polish
        n_iter += int(polish.nit)
    beta, vcov, sigma2, cov_re, re = prob.finalize(res.x, data)
    se, lo, hi = _wald(beta, vcov)
    # Variances below one ten-thousandth of the residual variance are
    # indistinguishable from the boundary at simplex precision.
    boundary = bool(np.any(np.diag(cov_re) <= 1e-4 * max(sigma2, 1e-300)))
    return RegressionFit(
        method="lmm", columns=data.columns, coef=beta, se=se,
        ci_low=lo, ci_high=hi, resid_var=sigma2, n_obs=data.y.size,
        n_groups=data.n_groups, converged=True, n_iter=n_iter,
        deviance=float(res.fun), cov_re=cov_re, random_effects=re,
        boundary=boundary,
    )


def fit_gee(data: RegressionData, corr: str = "exchangeable",
            max_iter: int = 100, tol: float = 1e-10) -> RegressionFit:
    """Estimating equations with an exchangeable working correlation.

    Alternates moment estimation of the within-individual correlation
    with weighted least squares for the coefficients, then reports
    robust (sandwich) standard errors.  With ``corr='independence'`` the
    coefficients equal pooled least squares and only the errors differ.
    """
    if corr not in ("exchangeable", "independence"):
        raise ValidationError(
            f"corr must be 'exchangeable' or 'independence', got {corr!r}"
        )
    _check_design(data)
    if data.n_groups < 2:
        raise EstimationError(
            "estimating equations need at least 2 individuals; "
            "use the pooled 'ols' method for a single series"
        )
    groups = _split_groups(data)
    n, p = data.X.shape
    beta = np.linalg.lstsq(data.X, data.y, rcond=None)[0]
    alpha = 0.0
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        resid = [y - X @ beta for X, y in groups]
        phi = sum(float(r @ r) for r in resid) / (n - p)
        if corr == "exchangeable":
            cross = sum(0.5 * (float(r.sum()) ** 2 - float(r @ r))
                        for r in resid)
            pairs = sum(m * (m - 1) / 2 for m in data.group_sizes)
            denom = phi * (pairs - p)
            alpha = cross / denom if denom > 0 else 0.0
            max_m = int(data.group_sizes.max())
            lo_bound = -1.0 / (max_m - 1) + 1e-6 if max_m > 1 else 0.0
            alpha = float(np.clip(alpha, lo_bound, 0.999))
        B = np.zeros((p, p))
        rhs = np.zeros(p)
        for X, y in groups:
            XtRi = _apply_exch_inv(X.T, alpha)
            B += XtRi @ X
            rhs += XtRi @ y
        try:
            new = np.linalg.solve(B, rhs)
        except np.linalg.LinAlgError as exc:
            raise EstimationError(
                f"estimating equations are singular: {exc}"
            ) from exc
        step = float(np.max(np.abs(new - beta)))
        beta = new
        if step < tol * (1.0 + float(np.max(np.abs(beta)))):
            break
    else:
        raise ConvergenceError(
            f"estimating equations did not converge in {max_iter} "
            "iterations", n_iter=max_iter,
        )
    resid = [y - X @ beta for X, y in groups]
    phi = sum(float(r @ r) for r in resid) / (n - p)
    B = np.zeros((p, p))
    meat = np.zeros((p, p))
    for (X, y), r in zip(groups, resid):
        XtRi = _apply_exch_inv(X.T, alpha)
        B += XtRi @ X
        g = XtRi @ r
        meat += np.outer(g, g)
    Binv = np.linalg.inv(B)
    vcov = Binv @ meat @ Binv
    se, lo, hi = _wald(beta, vcov)
    return RegressionFit(
        method="gee", columns=data.columns, coef=beta, se=se,
        ci_low=lo, ci_high=hi, resid_var=phi, n_obs=n,
        n_groups=data.n_groups, converged=True, n_iter=n_iter,
        corr=alpha if corr == "exchangeable" else 0.0,
    )


def _apply_exch_inv(Xt: np.ndarray, alpha: float) -> np.ndarray:
    """Right-multiply by the inverse exchangeable correlation matrix.

    For ``R = (1-a) I + a 11'`` the inverse is
    ``(I - a/(1+(m-1)a) 11') / (1-a)``, applied here without forming R.
    """
    if alpha == 0.0:
        return Xt
    m = Xt.shape[1]
    row_sums = Xt.sum(axis=1, keepdims=True)
    shrink = alpha / (1.0 + (m - 1) * alpha)
    return (Xt - shrink * row_sums) / (1.0 - alpha)


def fit_regression(data: RegressionData, method: str = "lmm",
                   **kwargs) -> RegressionFit:
    """Dispatch to one of the pooled estimators by name."""
    if method == "ols":
        return fit_ols(data)
    if method == "lmm":
        return fit_lmm(data, **kwargs)
    if method == "gee":
        return fit_gee(data, **kwargs)
    raise ValidationError(
        f"method must be 'ols', 'lmm' or 'gee', got {method!r}"
    )
