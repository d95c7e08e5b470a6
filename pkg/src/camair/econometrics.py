"""Regression core: OLS, the spatial regression family, bivariate Granger
causality, independent t-tests with effect sizes, and the distribution CDFs
they need.

The spatial-lag model is estimated by two-stage least squares with
instruments [X, WX, W^2 X] for the endogenous lag of the dependent
variable; the spatial error model by a feasible two-step transform. All
coefficient p-values are two-sided normal on z = beta / se, mirroring the
z-statistic presentation of the regression outputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betainc, gammainc, ndtr

from .errors import (
    ConstantSeriesError,
    InvalidParamsError,
    NonStationaryError,
    RankDeficientError,
    SeriesTooShortError,
    ValidationError,
    ZeroVarianceError,
)
from .spatial import SpatialWeights

INTERCEPT = "CONSTANT"


# ---------------------------------------------------------------------------
# Distribution CDFs
# ---------------------------------------------------------------------------

def dist_cdf(kind: str, params: Sequence[float], x: float) -> float:
    """CDF of normal/t/F/chi2 via the regularized incomplete beta and gamma."""
    x = float(x)
    if kind == "normal":
        mu, sigma = params
        if sigma <= 0 or not math.isfinite(sigma):
            raise InvalidParamsError(f"normal sigma must be > 0, got {sigma}")
        return float(ndtr((x - mu) / sigma))
    if kind == "t":
        (df,) = params
        if df <= 0:
            raise InvalidParamsError(f"t df must be > 0, got {df}")
        if x == 0.0:
            return 0.5
        tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + x * x))
        return float(1.0 - tail if x > 0 else tail)
    if kind == "F":
        d1, d2 = params
        if d1 <= 0 or d2 <= 0:
            raise InvalidParamsError(f"F dfs must be > 0, got ({d1}, {d2})")
        if x <= 0.0:
            return 0.0
        return float(betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2)))
    if kind == "chi2":
        (df,) = params
        if df <= 0:
            raise InvalidParamsError(f"chi2 df must be > 0, got {df}")
        if x <= 0.0:
            return 0.0
        return float(gammainc(df / 2.0, x / 2.0))
    raise InvalidParamsError(f"unknown distribution kind {kind!r}")


def _normal_two_sided_p(z: np.ndarray) -> np.ndarray:
    return 2.0 * ndtr(-np.abs(z))


# ---------------------------------------------------------------------------
# OLS and the spatial family
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegressionFit:
    names: tuple[str, ...]
    beta: np.ndarray
    std_errors: np.ndarray
    z_stats: np.ndarray
    p_values: np.ndarray
    r2: float
    n: int
    df: int
    rss: float
    method: str = "ols"
    rho: float | None = None
    lam: float | None = None
    spatial_pseudo_r2: float | None = None
    notes: tuple[str, ...] = ()

    def coefficient(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _check_full_rank(x: np.ndarray, names: Sequence[str]) -> None:
    r = np.linalg.qr(x, mode="r")
    diag = np.abs(np.diag(r))
    tol = np.finfo(float).eps * max(x.shape) * max(float(diag.max()), 1.0)
    for j, d in enumerate(diag):
        if d <= tol:
            raise RankDeficientError(names[j])


def _design(y, x, names, add_intercept):
    y = np.asarray(y, dtype=float).ravel()
    x = _as_matrix(x)
    n, p = x.shape
    if y.shape[0] != n:
        raise ValidationError(f"y has {y.shape[0]} rows, X has {n}")
    if names is None:
        names = [f"x{j}" for j in range(p)]
    names = list(names)
    if len(names) != p:
        raise ValidationError(f"{len(names)} names for {p} columns")
    if add_intercept:
        x = np.column_stack([np.ones(n), x])
        names = [INTERCEPT] + names
    if n <= x.shape[1]:
        raise ValidationError(f"need n > #params, got n={n}, p={x.shape[1]}")
    return y, x, tuple(names)


def _fit_ols(y, x, names, method="ols", rho=None, lam=None,
             spatial_pseudo_r2=None, notes=()):
    _check_full_rank(x, names)
    n, p = x.shape
    xtx = x.T @ x
    beta = np.linalg.solve(xtx, x.T @ y)
    resid = y - x @ beta
    rss = float(resid @ resid)
    df = n - p - (1 if rho is not None else 0)
    sigma2 = rss / df if df > 0 else float("nan")
    cov = sigma2 * np.linalg.inv(xtx)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, 0.0)
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - rss / tss if tss > 0 else float("nan")
    return RegressionFit(tuple(names), beta, se, z, _normal_two_sided_p(z), r2,
                         n, df, rss, method=method, rho=rho, lam=lam,
                         spatial_pseudo_r2=spatial_pseudo_r2, notes=tuple(notes))


def ols(y, x, names: Sequence[str] | None = None, add_intercept: bool = True) -> RegressionFit:
    """Ordinary least squares via the normal equations, with classical
    standard errors and two-sided normal p-values."""
    y, x, names = _design(y, x, names, add_intercept)
    return _fit_ols(y, x, names)


def _lag_columns(w: SpatialWeights, x: np.ndarray) -> np.ndarray:
    return np.column_stack([w.lag(x[:, j]) for j in range(x.shape[1])])


def spatial_durbin(y, x, w: SpatialWeights, names: Sequence[str] | None = None) -> RegressionFit:
    """OLS of y on [X, WX]; the lag-term coefficients carry a ``W_`` prefix.

    Identically-zero lag columns (an empty weight matrix) are dropped so the
    model degrades to plain OLS.
    """
    y_arr = np.asarray(y, dtype=float).ravel()
    x_arr = _as_matrix(x)
    if names is None:
        names = [f"x{j}" for j in range(x_arr.shape[1])]
    wx = _lag_columns(w, x_arr)
    keep = [j for j in range(wx.shape[1]) if np.any(wx[:, j] != 0.0)]
    notes = () if len(keep) == wx.shape[1] else ("zero lag columns dropped",)
    aug = np.column_stack([x_arr, wx[:, keep]]) if keep else x_arr
    aug_names = list(names) + [f"W_{names[j]}" for j in keep]
    y2, x2, names2 = _design(y_arr, aug, aug_names, add_intercept=True)
    fit = _fit_ols(y2, x2, names2, method="durbin", notes=notes)
    return fit


def spatial_lag_2sls(y, x, w: SpatialWeights,
                     names: Sequence[str] | None = None,
                     dependent_name: str = "y") -> RegressionFit:
    """Spatial-lag model by 2SLS: Wy instrumented by [X, WX, W^2 X].

    Reports rho (the lag coefficient), 2SLS standard errors, and a spatial
    pseudo r-squared: the squared correlation between y and the reduced-form
    prediction (I - rho W)^-1 X beta.
    """
    y_arr = np.asarray(y, dtype=float).ravel()
    x_arr = _as_matrix(x)
    if names is None:
        names = [f"x{j}" for j in range(x_arr.shape[1])]
    wy = w.lag(y_arr)
    if not np.any(wy != 0.0):
        fit = ols(y_arr, x_arr, names)
        return RegressionFit(fit.names, fit.beta, fit.std_errors, fit.z_stats,
                             fit.p_values, fit.r2, fit.n, fit.df, fit.rss,
                             method="lag2sls", rho=0.0,
                             spatial_pseudo_r2=fit.r2,
                             notes=("zero weights: reduced to OLS",))
    n = y_arr.shape[0]
    ones = np.ones(n)
    exog = np.column_stack([ones, x_arr])
    exog_names = [INTERCEPT] + list(names)
    _check_full_rank(exog, exog_names)
    wx = _lag_columns(w, x_arr)
    w2x = _lag_columns(w, wx)
    instruments = np.column_stack([exog, wx, w2x])

    regressors = np.column_stack([exog, wy])
    reg_names = exog_names + [f"W_{dependent_name}"]
    if n <= regressors.shape[1]:
        raise ValidationError("too few observations for 2SLS")

    proj, *_ = np.linalg.lstsq(instruments, regressors, rcond=None)
    fitted_regressors = instruments @ proj
    dtd = fitted_regressors.T @ fitted_regressors
    beta = np.linalg.solve(dtd, fitted_regressors.T @ y_arr)
    resid = y_arr - regressors @ beta
    rss = float(resid @ resid)
    k = regressors.shape[1]
    df = n - k
    sigma2 = rss / df
    cov = sigma2 * np.linalg.inv(dtd)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, 0.0)
    rho = float(beta[-1])

    notes = []
    fs_coef, *_ = np.linalg.lstsq(exog, wy, rcond=None)
    rss_fs_r = float(((wy - exog @ fs_coef) ** 2).sum())
    rss_fs_u = float(((wy - fitted_regressors[:, -1]) ** 2).sum())
    q = instruments.shape[1] - exog.shape[1]
    fs_df = n - instruments.shape[1]
    if rss_fs_u > 0 and fs_df > 0 and q > 0:
        first_stage_f = ((rss_fs_r - rss_fs_u) / q) / (rss_fs_u / fs_df)
        if first_stage_f < 1.0:
            notes.append(f"WeakInstruments: first-stage F={first_stage_f:.3g}")
            warnings.warn(f"weak instruments for Wy (F={first_stage_f:.3g})",
                          stacklevel=2)

    # reduced-form prediction for the spatial pseudo r-squared
    xb = exog @ beta[:-1]
    try:
        y_rf = np.linalg.solve(np.eye(n) - rho * w.to_dense(), xb)
        corr = np.corrcoef(y_arr, y_rf)[0, 1]
        pseudo_r2 = float(corr ** 2) if np.isfinite(corr) else float("nan")
    except np.linalg.LinAlgError:
        pseudo_r2 = float("nan")
        notes.append("reduced form singular at estimated rho")

    tss = float(((y_arr - y_arr.mean()) ** 2).sum())
    r2 = 1.0 - rss / tss if tss > 0 else float("nan")
    return RegressionFit(tuple(reg_names), beta, se, z, _normal_two_sided_p(z),
                         r2, n, df, rss, method="lag2sls", rho=rho,
                         spatial_pseudo_r2=pseudo_r2, notes=tuple(notes))


def spatial_error_fs(y, x, w: SpatialWeights,
                     names: Sequence[str] | None = None,
                     lam: float | None = None) -> RegressionFit:
    """Feasible two-step spatial error model.

    Step 1 estimates lambda by regressing OLS residuals on their spatial
    lag; step 2 refits OLS on the quasi-differenced data y - lambda Wy,
    X - lambda WX (intercept column included in the transform).
    """
    y_arr = np.asarray(y, dtype=float).ravel()
    x_arr = _as_matrix(x)
    if names is None:
        names = [f"x{j}" for j in range(x_arr.shape[1])]
    y0, x0, names0 = _design(y_arr, x_arr, names, add_intercept=True)
    base = _fit_ols(y0, x0, names0)
    if lam is None:
        resid = y0 - x0 @ base.beta
        wu = w.lag(resid)
        denom = float(wu @ wu)
        lam = float((wu @ resid) / denom) if denom > 0 else 0.0
    if abs(lam) >= 1.0:
        raise NonStationaryError(f"spatial error coefficient |{lam:.4f}| >= 1")
    y_t = y0 - lam * w.lag(y0)
    x_t = x0 - lam * _lag_columns(w, x0)
    fit = _fit_ols(y_t, x_t, names0, method="error", lam=lam)
    return fit


# ---------------------------------------------------------------------------
# Granger causality
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GrangerResult:
    """Exclusion tests for one lag order p of the bivariate autoregression."""

    lag: int
    ssr_f: float
    ssr_f_p: float
    ssr_chi2: float
    ssr_chi2_p: float
    lr: float
    lr_p: float
    params_f: float
    params_f_p: float
    rss_restricted: float
    rss_unrestricted: float
    a: np.ndarray = field(repr=False)  # (lag, 2, 2) coefficient matrices

    def min_p(self) -> float:
        return min(self.ssr_f_p, self.ssr_chi2_p, self.lr_p, self.params_f_p)


def _lagged(series: np.ndarray, p: int) -> np.ndarray:
    t = len(series)
    return np.column_stack([series[p - j:t - j] for j in range(1, p + 1)])


def granger(x1, x2, max_lag: int, difference: bool = False) -> list[GrangerResult]:
    """Does x2 help predict x1? One result per lag order 1..max_lag.

    Four statistics per lag: the RSS-based F and chi-squared tests, the
    likelihood ratio, and the joint parameter F on the cross coefficients;
    the two F variants test the same exclusion and agree numerically.
    """
    x1 = np.asarray(x1, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x1.shape != x2.shape:
        raise ValidationError("series lengths differ")
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(x2))):
        raise ValidationError("series contain non-finite values")
    if max_lag < 1:
        raise ValidationError("max_lag must be >= 1")
    if difference:
        x1, x2 = np.diff(x1), np.diff(x2)
    t = len(x1)
    if t < 3 * max_lag + 3:
        raise SeriesTooShortError(f"need T >= {3 * max_lag + 3}, got {t}")
    if np.ptp(x1) == 0.0 or np.ptp(x2) == 0.0:
        raise ConstantSeriesError("constant series cannot be tested")

    results = []
    for p in range(1, max_lag + 1):
        t_eff = t - p
        target = x1[p:]
        own = _lagged(x1, p)
        cross = _lagged(x2, p)
        ones = np.ones(t_eff)
        xu = np.column_stack([ones, own, cross])
        xr = np.column_stack([ones, own])
        beta_u, *_ = np.linalg.lstsq(xu, target, rcond=None)
        beta_r, *_ = np.linalg.lstsq(xr, target, rcond=None)
        rss_u = float(((target - xu @ beta_u) ** 2).sum())
        rss_r = float(((target - xr @ beta_r) ** 2).sum())
        df_denom = t_eff - 2 * p - 1
        if df_denom <= 0:
            raise SeriesTooShortError(f"lag {p}: no residual degrees of freedom")

        if rss_u <= 0.0:
            ssr_f = params_f = ssr_chi2 = lr = 0.0 if rss_r <= 0.0 else float("inf")
        else:
            ssr_f = ((rss_r - rss_u) / p) / (rss_u / df_denom)
            ssr_chi2 = t_eff * (rss_r - rss_u) / rss_u
            lr = t_eff * math.log(rss_r / rss_u)
            # Wald F on the cross-lag coefficients of the unrestricted fit
            xtx_inv = np.linalg.inv(xu.T @ xu)
            sel = slice(1 + p, 1 + 2 * p)
            b_cross = beta_u[sel]
            cov_cross = (rss_u / df_denom) * xtx_inv[sel, sel]
            params_f = float(b_cross @ np.linalg.solve(cov_cross, b_cross)) / p

        ssr_f_p = 1.0 - dist_cdf("F", (p, df_denom), ssr_f) if math.isfinite(ssr_f) else 0.0
        params_f_p = 1.0 - dist_cdf("F", (p, df_denom), params_f) if math.isfinite(params_f) else 0.0
        ssr_chi2_p = 1.0 - dist_cdf("chi2", (p,), ssr_chi2) if math.isfinite(ssr_chi2) else 0.0
        lr_p = 1.0 - dist_cdf("chi2", (p,), lr) if math.isfinite(lr) else 0.0

        target2 = x2[p:]
        beta_2, *_ = np.linalg.lstsq(xu, target2, rcond=None)
        a = np.empty((p, 2, 2))
        for j in range(p):
            a[j, 0, 0] = beta_u[1 + j]
            a[j, 0, 1] = beta_u[1 + p + j]
            a[j, 1, 0] = beta_2[1 + j]
            a[j, 1, 1] = beta_2[1 + p + j]

        results.append(GrangerResult(p, ssr_f, ssr_f_p, ssr_chi2, ssr_chi2_p,
                                     lr, lr_p, params_f, params_f_p,
                                     rss_r, rss_u, a))
    return results


# ---------------------------------------------------------------------------
# Independent two-sample t-test with effect sizes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TTestResult:
    difference: float
    df: int
    t: float
    p_two_sided: float
    p_less: float
    p_greater: float
    cohen_d: float
    hedges_g: float
    glass_delta1: float
    point_biserial_r: float


def independent_ttest(a, b) -> TTestResult:
    """Pooled-variance t-test of mean(a) - mean(b) with four effect sizes."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n1, n2 = len(a), len(b)
    if n1 < 2 or n2 < 2:
        raise ValidationError("both groups need at least 2 observations")
    var1 = float(a.var(ddof=1))
    var2 = float(b.var(ddof=1))
    if var1 == 0.0 and var2 == 0.0:
        raise ZeroVarianceError("both groups are constant")
    df = n1 + n2 - 2
    sp = math.sqrt(((n1 - 1) * var1 + (n2 - 1) * var2) / df)
    diff = float(a.mean() - b.mean())
    t = diff / (sp * math.sqrt(1.0 / n1 + 1.0 / n2))
    p_less = dist_cdf("t", (df,), t)
    d = diff / sp
    # exact small-sample correction factor for Hedges' g
    j = math.exp(math.lgamma(df / 2.0) - 0.5 * math.log(df / 2.0)
                 - math.lgamma((df - 1) / 2.0))
    glass = diff / math.sqrt(var1) if var1 > 0 else float("nan")
    return TTestResult(
        difference=diff,
        df=df,
        t=t,
        p_two_sided=2.0 * dist_cdf("t", (df,), -abs(t)),
        p_less=p_less,
        p_greater=1.0 - p_less,
        cohen_d=d,
        hedges_g=d * j,
        glass_delta1=glass,
        point_biserial_r=t / math.sqrt(t * t + df),
    )


# ---------------------------------------------------------------------------
# Regression output schema (regress.json)
# ---------------------------------------------------------------------------

REGRESS_JSON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["model", "n", "df", "r2", "variables"],
    "properties": {
        "model": {"enum": ["ols", "durbin", "lag2sls", "error"]},
        "n": {"type": "integer", "minimum": 1},
        "df": {"type": "integer"},
        "r2": {"type": ["number", "null"]},
        "spatial_pseudo_r2": {"type": ["number", "null"]},
        "rho": {"type": ["number", "null"]},
        "lambda": {"type": ["number", "null"]},
        "notes": {"type": "array", "items": {"type": "string"}},
        "variables": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "coeff", "z_statistic", "std_error", "p_value"],
                "properties": {
                    "name": {"type": "string"},
                    "coeff": {"type": "number"},
                    "z_statistic": {"type": "number"},
                    "std_error": {"type": "number"},
                    "p_value": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
    },
}


def fit_to_dict(fit: RegressionFit) -> dict:
    """Serializable summary of a fit, matching REGRESS_JSON_SCHEMA."""

    def _num(v):
        return None if v is None or not math.isfinite(v) else float(v)

    return {
        "model": fit.method,
        "n": fit.n,
        "df": fit.df,
        "r2": _num(fit.r2),
        "spatial_pseudo_r2": _num(fit.spatial_pseudo_r2),
        "rho": _num(fit.rho),
        "lambda": _num(fit.lam),
        "notes": list(fit.notes),
        "variables": [
            {"name": name, "coeff": float(b), "z_statistic": float(z),
             "std_error": float(se), "p_value": float(p)}
            for name, b, z, se, p in zip(fit.names, fit.beta, fit.z_stats,
                                         fit.std_errors, fit.p_values)
        ],
    }
