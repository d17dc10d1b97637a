"""LASSO machinery, the multi-source factor-augmented sparse regression
pipeline, expanding-window penalty tuning, and post-selection debiased
intervals.

The coordinate-descent solver works on the gram form with covariance
updates and certifies its solutions through the KKT conditions; all
call sites (pipeline step 4, nodewise regressions, tuning) share it.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import cd_sweeps
from .covariance import gamma2_thresholded, threshold_covariance
from .cpfactor import cc_iso
from .errors import DataError, DimensionError, NumericalError
from .regression import PredictionInterval, normal_quantile, solve_spd, _clamp_variance

__all__ = [
    "LassoConfig",
    "LassoFit",
    "MsFasrFit",
    "PdLassoState",
    "lasso",
    "lasso_kkt_violation",
    "ms_fasr",
    "tune_lambda_ev",
    "nodewise_precision",
    "pd_lasso_interval",
]


@dataclass(frozen=True)
class LassoConfig:
    """Coordinate-descent controls: stop when the largest coordinate change
    in a sweep is at most tol, cap the sweep count at max_sweeps."""

    max_sweeps: int = 10000
    tol: float = 1e-8


@dataclass
class LassoFit:
    coefficients: np.ndarray
    lam: float
    objective: float
    iterations: int
    converged: bool
    support: np.ndarray
    penalty_weights: np.ndarray | None = None

    def to_dict(self):
        return {
            "schema_version": 1,
            "coefficients": self.coefficients.tolist(),
            "lambda": self.lam,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "support": self.support.tolist(),
        }


def _lasso_objective(y, x, beta, lam, weights):
    resid = y - x @ beta
    pen = float(np.sum(weights * np.abs(beta)))
    return float(resid @ resid) / (2.0 * y.size) + lam * pen


def lasso(y, x, lam, cfg=None, penalty_weights=None, beta_init=None):
    """Cyclic coordinate-descent LASSO on (1/(2T))||y - X b||^2 + lam ||b||_1.

    penalty_weights (0/1 or general nonnegative) rescale the penalty per
    coordinate; zero-weight coordinates are unpenalized. Deterministic for a
    given configuration (fixed cyclic order). Exhausting max_sweeps returns
    the best iterate with converged=False rather than raising.
    """
    cfg = cfg or LassoConfig()
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise DimensionError("x must be T x p with T matching y")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise DataError("lasso inputs must be finite")
    if lam < 0:
        raise DataError(f"lambda must be >= 0, got {lam}")
    T, p = x.shape
    if T < 1:
        raise DimensionError("need T >= 1")

    if penalty_weights is None:
        weights = np.ones(p)
    else:
        weights = np.asarray(penalty_weights, dtype=np.float64).reshape(-1)
        if weights.size != p or np.any(weights < 0):
            raise DataError("penalty_weights must be p nonnegative reals")

    gram = x.T @ x / T
    gram = np.ascontiguousarray((gram + gram.T) / 2.0)
    corr = x.T @ y / T
    beta = (np.zeros(p) if beta_init is None
            else np.array(beta_init, dtype=np.float64).reshape(-1).copy())
    if beta.size != p:
        raise DimensionError("beta_init must have length p")

    sweeps, converged, _ = cd_sweeps(
        gram, corr, lam * weights, beta, cfg.max_sweeps, cfg.tol
    )
    support = np.flatnonzero(beta)
    return LassoFit(
        coefficients=beta,
        lam=float(lam),
        objective=_lasso_objective(y, x, beta, lam, weights),
        iterations=sweeps,
        converged=converged,
        support=support,
        penalty_weights=None if penalty_weights is None else weights,
    )


def lasso_kkt_violation(y, x, fit):
    """Largest KKT violation of a LassoFit: gradient bound off-support,
    sign-consistent equality on-support. Zero (up to solver tolerance) at
    the optimum."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    x = np.asarray(x, dtype=np.float64)
    beta = fit.coefficients
    weights = fit.penalty_weights if fit.penalty_weights is not None else np.ones(beta.size)
    grad = x.T @ (y - x @ beta) / y.size
    lamw = fit.lam * weights
    off = np.setdiff1d(np.arange(beta.size), fit.support, assume_unique=False)
    worst = 0.0
    if off.size:
        worst = max(worst, float(np.max(np.abs(grad[off]) - lamw[off])))
    if fit.support.size:
        s = fit.support
        worst = max(
            worst,
            float(np.max(np.abs(grad[s] - lamw[s] * np.sign(beta[s])))),
        )
    return worst


@dataclass
class PdLassoState:
    """Debiasing byproducts: selection, nodewise precision rows, debiased
    coefficients, and the three variance summands."""

    selected: np.ndarray
    theta_hat: np.ndarray
    tau2: np.ndarray
    beta0_debiased: np.ndarray
    variance_terms: tuple


@dataclass
class MsFasrFit:
    """Multi-source factor-augmented sparse regression output.

    beta1 = beta1_star - Lambda' beta0 by construction; the forecast is
    beta0' Vhat_T + beta1_star' fhat_T. Arrays needed by the debiasing step
    are kept on the fit (underscore fields).
    """

    beta0: LassoFit
    beta1_star: np.ndarray
    beta1: np.ndarray
    lambda_hat: np.ndarray
    vhat_T: np.ndarray
    forecast: float
    horizon: int
    intercept: bool
    pd_state: PdLassoState | None = None
    _vhat: np.ndarray = field(default=None, repr=False)
    _ytilde: np.ndarray = field(default=None, repr=False)
    _y: np.ndarray = field(default=None, repr=False)
    _w_aug: np.ndarray = field(default=None, repr=False)
    _factors: np.ndarray = field(default=None, repr=False)
    _cp: object = field(default=None, repr=False)

    def to_dict(self):
        return {
            "schema_version": 1,
            "beta0": self.beta0.to_dict(),
            "beta1_star": self.beta1_star.tolist(),
            "beta1": self.beta1.tolist(),
            "lambda_hat": self.lambda_hat.tolist(),
            "vhat_T": self.vhat_T.tolist(),
            "forecast": self.forecast,
            "horizon": self.horizon,
            "intercept": self.intercept,
            "support": self.beta0.support.tolist(),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)


def _augment(w, add_intercept, unpenalized):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    T, p = w.shape
    unpen = set(int(j) for j in unpenalized)
    if any(not 0 <= j < p for j in unpen):
        raise DimensionError("unpenalized indices out of range")
    if add_intercept:
        w = np.hstack([np.ones((T, 1)), w])
        unpen = {0} | {j + 1 for j in unpen}
    weights = np.ones(w.shape[1])
    for j in unpen:
        weights[j] = 0.0
    return w, weights


def _projection_steps(factors, w_aug, y, h):
    """Steps 2-3 shared by the pipeline and the tuning loop."""
    T = factors.shape[0]
    n = T - h
    if n <= factors.shape[1]:
        raise DimensionError("need T - h > r")
    fgram = factors.T @ factors
    lam_hat = solve_spd(fgram, factors.T @ w_aug, "factor gram").T
    vhat = w_aug - factors @ lam_hat.T
    fn = factors[:n]
    beta1_star = solve_spd(fn.T @ fn, fn.T @ y[h:], "factor gram")
    ytilde = y[h:] - fn @ beta1_star
    return lam_hat, vhat, beta1_star, ytilde


def _default_grid(series, signal_r, n_points=8):
    anchor = math.sqrt(math.log(series.d) / len(series)) + 1.0 / signal_r
    return np.geomspace(anchor / 10.0, anchor * 10.0, n_points)


def _bic_select(ytilde, vn, grid, weights, cfg):
    n = ytilde.size
    best = None
    for lam_k in np.sort(np.asarray(grid, dtype=np.float64)):
        fit_k = lasso(ytilde, vn, float(lam_k), cfg, penalty_weights=weights)
        rss = float(np.sum((ytilde - vn @ fit_k.coefficients) ** 2))
        k = int(np.count_nonzero(fit_k.coefficients))
        bic = n * math.log(max(rss, 1e-300) / n) + k * math.log(n)
        if best is None or bic < best[0] - 1e-12:
            best = (bic, float(lam_k), fit_k)
    return best[1], best[2]


def ms_fasr(y, w, series, r, h, lam="auto", cfg=None, cciso_cfg=None,
            add_intercept=False, unpenalized=(), grid=None, gamma_split=0.8,
            freeze_factors=False, cp=None):
    """Five-step residual-on-residual forecaster.

    1. CP factors from the tensor series (reused from `cp` when supplied);
    2. project w on the factors to get Vhat; 3. project y on the factors to
    get ytilde; 4. LASSO of ytilde on Vhat at penalty lam ("auto" tunes by
    expanding forecast validation, "bic" by BIC over the grid, "rate" uses
    the fixed rule sqrt(log d / T) + 1/s_r-hat); 5. recombine
    beta1 = beta1_star - Lambda' beta0 and forecast
    beta0'Vhat_T + beta1_star'fhat_T.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    T = len(series)
    if y.size != T:
        raise DimensionError(f"y has length {y.size}, series has {T}")
    if cp is None:
        cp = cc_iso(series, r, cciso_cfg)
    w_aug, weights = _augment(w, add_intercept, unpenalized)
    if w_aug.shape[0] != T:
        raise DimensionError("w must have T rows")

    if isinstance(lam, str):
        if lam == "auto":
            lam_value = tune_lambda_ev(
                y, w, series, r, h, grid=grid, gamma_split=gamma_split,
                cfg=cfg, cciso_cfg=cciso_cfg, add_intercept=add_intercept,
                unpenalized=unpenalized, freeze_factors=freeze_factors,
            )
            lam_mode = float(lam_value)
        elif lam in ("bic", "rate"):
            lam_mode = lam
        else:
            raise DataError(f"unknown lambda mode {lam!r}")
    else:
        lam_mode = float(lam)

    lam_hat, vhat, beta1_star, ytilde = _projection_steps(cp.factors, w_aug, y, h)
    n = T - h
    if lam_mode == "bic":
        lam_grid = grid if grid is not None else _default_grid(series, cp.signals[-1])
        lam_used, fit0 = _bic_select(ytilde, vhat[:n], lam_grid, weights, cfg)
    else:
        if lam_mode == "rate":
            # the fixed rate rule sqrt(log d / T) + 1 / s_r-hat
            lam_used = math.sqrt(math.log(series.d) / T) + 1.0 / float(cp.signals[-1])
        else:
            lam_used = lam_mode
        fit0 = lasso(ytilde, vhat[:n], lam_used, cfg, penalty_weights=weights)

    beta1 = beta1_star - lam_hat.T @ fit0.coefficients
    vhat_T = vhat[-1]
    point = float(fit0.coefficients @ vhat_T + beta1_star @ cp.factors[-1])
    out = MsFasrFit(
        beta0=fit0,
        beta1_star=beta1_star,
        beta1=beta1,
        lambda_hat=lam_hat,
        vhat_T=vhat_T,
        forecast=point,
        horizon=h,
        intercept=bool(add_intercept),
        _vhat=vhat,
        _ytilde=ytilde,
        _y=y,
        _w_aug=w_aug,
        _factors=cp.factors,
        _cp=cp,
    )
    # in-sample orthogonality of the projection residuals to the factors
    ortho = np.max(np.abs(vhat.T @ cp.factors)) / T if vhat.size else 0.0
    if ortho > 1e-8:
        raise NumericalError(f"projection residuals not factor-orthogonal ({ortho:.2e})")
    return out


def tune_lambda_ev(y, w, series, r, h, grid=None, gamma_split=0.8, cfg=None,
                   cciso_cfg=None, add_intercept=False, unpenalized=(),
                   freeze_factors=False):
    """Expanding forecast validation for the LASSO penalty.

    Fits on t = 1..ceil(gamma*T), then produces recursively re-estimated
    one-step-ahead (horizon-h) forecasts over the validation tail for each
    candidate; returns the MSE minimizer (ties go to the smallest lambda).
    factors are re-estimated per window unless freeze_factors, which reuses
    the full-sample factors (cheaper, mildly leaky; off by default).
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    T = len(series)
    if not 0.0 < gamma_split < 1.0:
        raise DataError(f"gamma_split must be in (0, 1), got {gamma_split}")
    n_train = int(math.ceil(gamma_split * T))
    if n_train >= T:
        raise DataError("validation window is empty")
    w_aug, weights = _augment(w, add_intercept, unpenalized)

    full_cp = cc_iso(series, r, cciso_cfg)
    if grid is None:
        grid = _default_grid(series, full_cp.signals[-1])
    grid = np.sort(np.asarray(grid, dtype=np.float64))
    if grid.size == 0:
        raise DataError("lambda grid must be nonempty")

    sq_errors = np.zeros(grid.size)
    count = 0
    for target in range(n_train, T):
        m = target + 1 - h  # forecast y at `target` from data through time m
        if m < 2:
            continue
        if freeze_factors:
            factors = full_cp.factors[:m]
        else:
            window = series.__class__.from_stack(series.stack[:m])
            factors = cc_iso(window, r, cciso_cfg).factors
        try:
            lam_hat, vhat, beta1_star, ytilde = _projection_steps(
                factors, w_aug[:m], y[:m], h
            )
        except DimensionError:
            continue
        n = m - h
        f_last = factors[-1]
        v_last = vhat[-1]
        for gi, lam_k in enumerate(grid):
            fit_k = lasso(ytilde, vhat[:n], float(lam_k), cfg, penalty_weights=weights)
            pred = float(fit_k.coefficients @ v_last + beta1_star @ f_last)
            sq_errors[gi] += (y[target] - pred) ** 2
        count += 1
    if count == 0:
        raise DataError("validation window is empty")
    return float(grid[int(np.argmin(sq_errors / count))])


def nodewise_precision(vhat, selected, lambdas, cfg=None):
    """Nodewise-regression rows of the precision matrix for the selected set.

    Row for node j is tau_j^-2 * (unit at j, -gamma_j elsewhere), with
    tau_j^2 = (1/T)||V_j - V_{-j} gamma_j||^2 + lambda_j ||gamma_j||_1.
    """
    vhat = np.asarray(vhat, dtype=np.float64)
    if vhat.ndim != 2 or vhat.shape[1] < 2:
        raise DimensionError("vhat must be T x p with p >= 2")
    selected = np.asarray(selected, dtype=int).reshape(-1)
    if selected.size == 0:
        raise DimensionError("selected set must be nonempty")
    p = vhat.shape[1]
    n = vhat.shape[0]
    lambdas = np.broadcast_to(
        np.asarray(lambdas, dtype=np.float64), (selected.size,)
    )
    theta = np.zeros((selected.size, p))
    tau2 = np.zeros(selected.size)
    for row, j in enumerate(selected):
        others = np.delete(np.arange(p), j)
        fit_j = lasso(vhat[:, j], vhat[:, others], float(lambdas[row]), cfg)
        gamma_j = fit_j.coefficients
        resid = vhat[:, j] - vhat[:, others] @ gamma_j
        t2 = float(resid @ resid) / n + float(lambdas[row]) * float(
            np.sum(np.abs(gamma_j))
        )
        if t2 <= 1e-12:
            raise NumericalError(f"degenerate nodewise residual at column {j}")
        theta[row, j] = 1.0 / t2
        theta[row, others] = -gamma_j / t2
        tau2[row] = t2
    return theta, tau2


def _pd_interval_core(fit, cp, gamma2, w_T, level, lambda_node=None,
                      omega_rule="scad", omega_lam=None, cfg=None):
    if not 0.0 < level < 1.0:
        raise DataError(f"level must be in (0, 1), got {level}")
    h = fit.horizon
    T = fit._factors.shape[0]
    n = T - h
    vn = fit._vhat[:n]
    fn = fit._factors[:n]
    yn = fit._y[h:]
    wn = fit._w_aug[:n]
    p = vn.shape[1]
    selected = fit.beta0.support
    beta0 = fit.beta0.coefficients

    w_T = np.asarray(w_T, dtype=np.float64).reshape(-1)
    if fit.intercept:
        w_T_aug = np.concatenate([[1.0], w_T])
    else:
        w_T_aug = w_T
    if w_T_aug.size != p:
        raise DimensionError(f"w_T has length {w_T_aug.size}, expected {p}")

    if selected.size:
        d = int(np.prod(cp.dims))
        if lambda_node is None:
            lambda_node = math.sqrt(math.log(d) / T) + math.sqrt(
                1.0 / float(cp.signals[-1])
            )
        theta, tau2 = nodewise_precision(vn, selected, lambda_node, cfg)
        resid0 = fit._ytilde - vn @ beta0
        beta_pl = beta0.copy()
        beta_pl[selected] += theta @ (vn.T @ resid0) / n
    else:
        theta = np.zeros((0, p))
        tau2 = np.zeros(0)
        beta_pl = beta0.copy()

    fgram = fn.T @ fn
    beta1 = solve_spd(fgram, fn.T @ (yn - wn @ beta_pl), "factor gram")
    eps = yn - wn @ beta_pl - fn @ beta1
    point = float(w_T_aug @ beta_pl + fit._factors[-1] @ beta1)

    gram_n = fgram / n
    meat = fn.T @ (fn * eps[:, None] ** 2) / n
    ginv_f = solve_spd(gram_n, np.eye(fn.shape[1]))
    f_T = fit._factors[-1]
    var_beta1 = _clamp_variance(
        float(f_T @ ginv_f @ meat @ ginv_f @ f_T) / n, "factor-coefficient"
    )

    b1s = beta1 / cp.signals
    var_ft = _clamp_variance(float(b1s @ gamma2 @ b1s), "factor")

    if selected.size:
        if omega_lam is None:
            omega_lam = math.sqrt(math.log(p) / n)
        scores = vn * eps[:, None]
        omega = threshold_covariance(scores, omega_rule, omega_lam).matrix
        mid = theta @ omega @ theta.T
        v_sel = fit.vhat_T[selected]
        var_beta0 = _clamp_variance(float(v_sel @ mid @ v_sel) / n, "selection")
    else:
        var_beta0 = 0.0

    total = var_beta0 + var_beta1 + var_ft
    if total < -1e-10:
        raise NumericalError(f"negative total variance {total:.3e}")
    std = math.sqrt(max(total, 0.0))
    q = normal_quantile(0.5 + level / 2.0)
    fit.pd_state = PdLassoState(
        selected=selected.copy(),
        theta_hat=theta,
        tau2=tau2,
        beta0_debiased=beta_pl,
        variance_terms=(var_beta0, var_beta1, var_ft),
    )
    return PredictionInterval(
        point=point,
        std=std,
        level=level,
        lower=point - q * std,
        upper=point + q * std,
        decomposition=(var_beta0 + var_beta1, var_ft),
    )


def pd_lasso_interval(fit, cp, cov, w_T, level, lambda_node=None,
                      omega_rule="scad", omega_lam=None, cfg=None):
    """Post-selection debiased interval for the conditional mean.

    Debiases only the selected coordinates through nodewise precision rows,
    re-estimates the factor coefficients, and adds three variance pieces:
    selection, factor-coefficient, and factor-estimation (through the
    thresholded error covariance `cov`). An empty selection degrades to the
    factor-only interval.
    """
    gamma2 = gamma2_thresholded(cp, cov)
    return _pd_interval_core(
        fit, cp, gamma2, w_T, level,
        lambda_node=lambda_node, omega_rule=omega_rule,
        omega_lam=omega_lam, cfg=cfg,
    )
