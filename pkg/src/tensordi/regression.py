"""OLS diffusion-index regression, point forecasts, and prediction intervals.

Time alignment: with horizon h, coefficients are fit on the pairs
(z_t, y_{t+h}) for t = 1..T-h; scale factors keep the literal 1/T
normalization of the displayed estimators, so homoskedastic and
heteroskedastic variance estimates coincide exactly only at h = 0.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DataError, DimensionError, NumericalError

__all__ = [
    "DiffusionFit",
    "PredictionInterval",
    "fit_ols",
    "forecast",
    "prediction_interval",
    "normal_quantile",
]

# Acklam's rational approximation to the inverse standard-normal CDF.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def normal_quantile(p):
    """Inverse standard-normal CDF (Acklam approximation plus one Halley
    refinement through erfc; absolute error well below 1e-9)."""
    if not 0.0 < p < 1.0:
        raise DataError(f"quantile level must be in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # Halley refinement
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


@dataclass
class DiffusionFit:
    """OLS fit of y_{t+h} on (w_t, fhat_t) with its asymptotic variance."""

    beta0: np.ndarray
    beta1: np.ndarray
    residuals: np.ndarray
    horizon: int
    avar_beta: np.ndarray
    avar_mode: str
    sigma2_eps: float | None
    n_obs: int

    def __post_init__(self):
        self.beta0 = np.asarray(self.beta0, dtype=np.float64).reshape(-1)
        self.beta1 = np.asarray(self.beta1, dtype=np.float64).reshape(-1)
        self.residuals = np.asarray(self.residuals, dtype=np.float64).reshape(-1)
        self.avar_beta = np.asarray(self.avar_beta, dtype=np.float64)
        if self.residuals.size != self.n_obs - self.horizon:
            raise DimensionError("residual length must be T - h")
        m = self.beta0.size + self.beta1.size
        if self.avar_beta.shape != (m, m):
            raise DimensionError("avar_beta must be (p+r) x (p+r)")
        if np.max(np.abs(self.avar_beta - self.avar_beta.T)) > 1e-10:
            raise NumericalError("avar_beta must be symmetric")
        if np.linalg.eigvalsh(self.avar_beta)[0] < -1e-10:
            raise NumericalError("avar_beta must be positive semi-definite")

    @property
    def beta(self):
        return np.concatenate([self.beta0, self.beta1])

    def to_dict(self):
        return {
            "schema_version": 1,
            "beta0": self.beta0.tolist(),
            "beta1": self.beta1.tolist(),
            "residuals": self.residuals.tolist(),
            "horizon": self.horizon,
            "avar_beta": self.avar_beta.tolist(),
            "avar_mode": self.avar_mode,
            "sigma2_eps": self.sigma2_eps,
            "n_obs": self.n_obs,
        }


@dataclass
class PredictionInterval:
    """Symmetric normal-quantile interval around a point forecast."""

    point: float
    std: float
    level: float
    lower: float
    upper: float
    decomposition: tuple

    def to_dict(self):
        return {
            "schema_version": 1,
            "point": self.point,
            "std": self.std,
            "level": self.level,
            "lower": self.lower,
            "upper": self.upper,
            "decomposition": list(self.decomposition),
        }


def _named_collinear(gram):
    d = np.sqrt(np.clip(np.diagonal(gram), 1e-300, None))
    corr = gram / np.outer(d, d)
    np.fill_diagonal(corr, 0.0)
    i, j = np.unravel_index(np.argmax(np.abs(corr)), corr.shape)
    return int(i), int(j), float(corr[i, j])


def solve_spd(gram, rhs, what="design gram"):
    """Cholesky solve with jitter escalation (0, 1e-12, 1e-10).

    Genuinely rank-deficient grams (relative eigenvalue below 1e-12) fail
    with the near-collinear column pair named; the jitters only rescue
    borderline factorization failures of well-conditioned grams.
    """
    gram = (gram + gram.T) / 2.0
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals[-1] <= 0.0 or eigvals[0] <= 1e-12 * eigvals[-1]:
        i, j, c = _named_collinear(gram)
        raise NumericalError(
            f"singular {what}: columns {i} and {j} are near-collinear (corr={c:.6f})"
        )
    for jitter in (0.0, 1e-12, 1e-10):
        try:
            fac = cho_factor(gram + jitter * np.eye(gram.shape[0]), lower=True)
            return cho_solve(fac, rhs)
        except np.linalg.LinAlgError:
            continue
    i, j, c = _named_collinear(gram)
    raise NumericalError(
        f"singular {what}: columns {i} and {j} are near-collinear (corr={c:.6f})"
    )


def _as_factors(fit_or_factors):
    factors = getattr(fit_or_factors, "factors", fit_or_factors)
    return np.asarray(factors, dtype=np.float64)


def fit_ols(y, w, fit, h, avar_mode="hetero"):
    """OLS of y_{t+h} on z_t = (w_t', fhat_t')' for t = 1..T-h.

    Parameters
    ----------
    y : (T,) target series.
    w : (T, p) observed predictors, or None for a factors-only regression.
    fit : CpFit (or a T x r factor matrix).
    h : forecast horizon, 0 <= h < T.
    avar_mode : "hetero" (sandwich) or "homo" (scalar variance).
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    factors = _as_factors(fit)
    T = factors.shape[0]
    if y.size != T:
        raise DimensionError(f"y has length {y.size}, factors have {T} rows")
    if not 0 <= h < T:
        raise DimensionError(f"horizon must satisfy 0 <= h < T, got {h}")
    if w is None:
        w = np.empty((T, 0))
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    if w.shape[0] != T:
        raise DimensionError("w must have T rows")
    if avar_mode not in ("hetero", "homo"):
        raise DataError(f"unknown avar_mode {avar_mode!r}")
    p = w.shape[1]
    r = factors.shape[1]
    if p + r >= T - h:
        raise DimensionError(
            f"need p + r < T - h ({p}+{r} vs {T - h}) for OLS"
        )

    z = np.hstack([w, factors])
    zn = z[: T - h]
    yn = y[h:]
    gram = zn.T @ zn / T
    rhs = zn.T @ yn / T
    beta = solve_spd(gram, rhs)
    resid = yn - zn @ beta

    gram_inv = solve_spd(gram, np.eye(p + r))
    if avar_mode == "hetero":
        meat = zn.T @ (zn * resid[:, None] ** 2) / T
        avar = gram_inv @ meat @ gram_inv
        sigma2 = None
    else:
        sigma2 = float(resid @ resid / T)
        avar = sigma2 * gram_inv
    avar = (avar + avar.T) / 2.0

    return DiffusionFit(
        beta0=beta[:p],
        beta1=beta[p:],
        residuals=resid,
        horizon=h,
        avar_beta=avar,
        avar_mode=avar_mode,
        sigma2_eps=sigma2,
        n_obs=T,
    )


def forecast(fit, w_T, f_T_hat):
    """Point forecast beta0'w_T + beta1'fhat_T."""
    w_T = np.asarray(w_T, dtype=np.float64).reshape(-1)
    f_T_hat = np.asarray(f_T_hat, dtype=np.float64).reshape(-1)
    if w_T.size != fit.beta0.size:
        raise DimensionError(
            f"w_T has length {w_T.size}, expected {fit.beta0.size}"
        )
    if f_T_hat.size != fit.beta1.size:
        raise DimensionError(
            f"f_T has length {f_T_hat.size}, expected {fit.beta1.size}"
        )
    return float(fit.beta0 @ w_T + fit.beta1 @ f_T_hat)


def _clamp_variance(value, what):
    if value < -1e-10:
        raise NumericalError(f"negative {what} variance ({value:.3e})")
    return max(value, 0.0)


def prediction_interval(fit, cp, gamma, w_T, level):
    """Two-term interval for the conditional mean forecast.

    std^2 = (1/T) z_T' Avar(beta) z_T + beta1' S^-1 Gamma S^-1 beta1 with
    S = diag(signals); gamma is the factor-variance estimate (r x r).
    """
    if not 0.0 < level < 1.0:
        raise DataError(f"level must be in (0, 1), got {level}")
    gamma = np.asarray(gamma, dtype=np.float64)
    r = fit.beta1.size
    if gamma.shape != (r, r):
        raise DimensionError(f"gamma must be {r} x {r}")
    if gamma.size and np.max(np.abs(gamma - gamma.T)) > 1e-8 * max(
        1.0, float(np.max(np.abs(gamma)))
    ):
        raise NumericalError("gamma must be symmetric")
    signals = np.asarray(cp.signals, dtype=np.float64)
    if np.any(signals <= 0):
        raise NumericalError("signals must be strictly positive")

    f_T = cp.factors[-1]
    point = forecast(fit, w_T, f_T)
    z_T = np.concatenate([np.asarray(w_T, dtype=np.float64).reshape(-1), f_T])
    beta_term = _clamp_variance(
        float(z_T @ fit.avar_beta @ z_T) / fit.n_obs, "coefficient"
    )
    b1s = fit.beta1 / signals
    factor_term = _clamp_variance(float(b1s @ gamma @ b1s), "factor")

    std = math.sqrt(beta_term + factor_term)
    q = normal_quantile(0.5 + level / 2.0)
    return PredictionInterval(
        point=point,
        std=std,
        level=level,
        lower=point - q * std,
        upper=point + q * std,
        decomposition=(beta_term, factor_term),
    )


def interval_to_json(interval, path):
    with open(path, "w") as fh:
        json.dump(interval.to_dict(), fh, sort_keys=True)
