"""Vectorized-PCA factor estimation and its prediction interval, the
comparison arm for the CP-based forecasts.

Normalization: (1/T) F'F = I_r, loadings carry the scale, and the stored
eigenvalues are the top r of (1/(dT)) sum_t vec(X_t) vec(X_t)' (the diagonal
of the V-tilde matrix in the interval formula).
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .covariance import default_threshold_level, hac_gamma, threshold_covariance
from .errors import DimensionError, NumericalError
from .regression import PredictionInterval, fit_ols, normal_quantile, _clamp_variance
from .tensor import TensorSeries

__all__ = ["PcaFit", "pca_fit", "pca_prediction_interval"]


@dataclass
class PcaFit:
    loadings: np.ndarray     # d x r
    factors: np.ndarray      # T x r, (1/T) F'F = I
    eigenvalues: np.ndarray  # top r of (1/(dT)) X'X
    normalization: str = "factors_unit_variance"

    def __post_init__(self):
        self.loadings = np.asarray(self.loadings, dtype=np.float64)
        self.factors = np.asarray(self.factors, dtype=np.float64)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        T, r = self.factors.shape
        gram = self.factors.T @ self.factors / T
        if np.max(np.abs(gram - np.eye(r)), initial=0.0) > 1e-8:
            raise NumericalError("factor normalization (1/T) F'F = I violated")


def _fix_sign_pair(loading_col, factor_col):
    idx = int(np.argmax(np.abs(loading_col)))
    if loading_col[idx] < 0:
        return -loading_col, -factor_col
    return loading_col, factor_col


def pca_fit(series, r):
    """Principal components of the vectorized series.

    The eigen-problem is solved on the T x T dual gram when T < d and on the
    d x d covariance otherwise. Loading signs follow the same
    largest-entry-positive convention as the CP estimator.
    """
    if isinstance(series, TensorSeries):
        x = series.vec_matrix()
    else:
        x = np.asarray(series, dtype=np.float64)
    T, d = x.shape
    if not 1 <= r <= min(T, d):
        raise DimensionError(f"rank must satisfy 1 <= r <= {min(T, d)}, got {r}")

    if T < d:
        gram = x @ x.T / (d * T)
        eigvals, eigvecs = scipy.linalg.eigh(
            gram, subset_by_index=[T - r, T - 1]
        )
        eigvals = eigvals[::-1]
        v = eigvecs[:, ::-1]
        factors = math.sqrt(T) * v
        loadings = x.T @ factors / T
    else:
        cov = x.T @ x / (d * T)
        eigvals, eigvecs = scipy.linalg.eigh(
            cov, subset_by_index=[d - r, d - 1]
        )
        eigvals = eigvals[::-1]
        u = eigvecs[:, ::-1]
        scale = np.sqrt(np.maximum(d * eigvals, 1e-300))
        loadings = u * scale
        factors = x @ u / scale

    if np.any(eigvals <= 0):
        raise NumericalError("degenerate series: nonpositive leading eigenvalue")
    cols = [_fix_sign_pair(loadings[:, i], factors[:, i]) for i in range(r)]
    loadings = np.column_stack([c[0] for c in cols])
    factors = np.column_stack([c[1] for c in cols])
    return PcaFit(loadings=loadings, factors=factors, eigenvalues=eigvals)


def pca_prediction_interval(pcafit, y, w, gamma_kind, level, h=1,
                            rule_kind="scad", lam=None, n=None,
                            residuals=None, x_mat=None):
    """Interval for the conditional mean under the vector-PCA convention:
    std^2 = (1/T) z' Avar(beta) z + (1/d) beta1' Vtilde^-1 Gamma Vtilde^-1 beta1
    with Gamma either the thresholded A' Sigma_e^T A ("threshold") or the
    cross-sectional HAC sum over the first n indices ("hac",
    n = min(sqrt(d), sqrt(T)) by default).
    """
    if gamma_kind not in ("threshold", "hac"):
        raise DimensionError(f"unknown gamma_kind {gamma_kind!r}")
    factors = pcafit.factors
    T, r = factors.shape
    d = pcafit.loadings.shape[0]
    fit = fit_ols(y, w, factors, h)

    if residuals is None:
        if x_mat is None:
            raise DimensionError("need residuals or the T x d data matrix")
        residuals = x_mat - factors @ pcafit.loadings.T

    if gamma_kind == "threshold":
        if lam is None:
            lam = default_threshold_level(d, T)
        cov = threshold_covariance(residuals, rule_kind, lam)
        # the (1/d) keeps Gamma at the O(1) scale of the limit it estimates
        gamma = pcafit.loadings.T @ (cov.matrix @ pcafit.loadings) / d
    else:
        if n is None:
            n = max(1, int(min(math.sqrt(d), math.sqrt(T))))
        gamma = hac_gamma(pcafit.loadings, residuals, n, t_divisor=T)

    vinv = 1.0 / pcafit.eigenvalues
    avar_f = (vinv[:, None] * gamma) * vinv[None, :]

    f_T = factors[-1]
    w_T = (np.asarray(w, dtype=np.float64).reshape(T, -1)[-1]
           if w is not None else np.empty(0))
    point = float(fit.beta0 @ w_T) + float(fit.beta1 @ f_T)
    z_T = np.concatenate([w_T, f_T])
    beta_term = _clamp_variance(float(z_T @ fit.avar_beta @ z_T) / T, "coefficient")
    factor_term = _clamp_variance(
        float(fit.beta1 @ avar_f @ fit.beta1) / d, "factor"
    )
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
