"""Thresholded high-dimensional error-covariance estimation and the induced
factor-variance estimators.

Thresholding applies to off-diagonal entries only; diagonals keep their raw
sample values. The three rules (hard, soft, SCAD) all satisfy the operator
conditions |T(z)| <= |z|, T(z) = 0 for |z| <= lambda, |T(z) - z| <= lambda.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from ._kernels import THRESHOLD_KIND, threshold_inplace
from .cpfactor import b_matrix
from .errors import DataError, DimensionError, NumericalError

__all__ = [
    "ThresholdRule",
    "ThresholdedCov",
    "apply_threshold",
    "threshold_covariance",
    "gamma1_diagonal",
    "gamma2_thresholded",
    "gamma2_from_residuals",
    "hac_gamma",
    "kron_toeplitz_autocov",
]


@dataclass(frozen=True)
class ThresholdRule:
    """Entrywise shrinkage rule: kind in {hard, soft, scad}, level lambda,
    SCAD shape a > 2 (default 3.7)."""

    kind: str
    lam: float
    a: float = 3.7

    def __post_init__(self):
        if self.kind not in THRESHOLD_KIND:
            raise DataError(f"unknown threshold kind {self.kind!r}")
        if self.lam < 0:
            raise DataError(f"lambda must be >= 0, got {self.lam}")
        if self.kind == "scad" and self.a <= 2:
            raise DataError(f"scad requires a > 2, got {self.a}")


def apply_threshold(z, rule):
    """Apply the thresholding rule to a scalar (or elementwise to an array)."""
    z = np.asarray(z, dtype=np.float64)
    lam, a = rule.lam, rule.a
    if rule.kind == "hard":
        out = np.where(np.abs(z) > lam, z, 0.0)
    elif rule.kind == "soft":
        out = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
    else:
        az = np.abs(z)
        soft = np.sign(z) * np.maximum(az - lam, 0.0)
        mid = ((a - 1.0) * z - np.sign(z) * a * lam) / (a - 2.0)
        out = np.where(az <= 2.0 * lam, soft, np.where(az <= a * lam, mid, z))
    if out.ndim == 0:
        return float(out)
    return out


@dataclass
class ThresholdedCov:
    """Sparse-ified d x d covariance with the rule that produced it."""

    matrix: np.ndarray
    lambda_used: float
    rule: ThresholdRule
    nnz_offdiag: int

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise DimensionError("covariance must be square")
        if np.max(np.abs(self.matrix - self.matrix.T), initial=0.0) > 1e-12:
            raise NumericalError("thresholded covariance must be symmetric")

    @property
    def dim(self):
        return self.matrix.shape[0]

    def export_triplets(self, path):
        """Write nonzero entries as (i, j, value) CSV rows (0-based indices)."""
        i_idx, j_idx = np.nonzero(self.matrix)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i", "j", "value"])
            for i, j in zip(i_idx.tolist(), j_idx.tolist()):
                writer.writerow([i, j, repr(float(self.matrix[i, j]))])


def _symmetrize_inplace(mat, block=1024):
    """(mat + mat.T)/2 without a full-size temporary."""
    n = mat.shape[0]
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        for j0 in range(i0, n, block):
            j1 = min(j0 + block, n)
            avg = (mat[i0:i1, j0:j1] + mat[j0:j1, i0:i1].T) / 2.0
            mat[i0:i1, j0:j1] = avg
            mat[j0:j1, i0:i1] = avg.T
    return mat


def default_threshold_level(d, T, signal_r=None):
    """Rate-based default lambda: sqrt(log d / T) + d^(-alpha/2) with the
    weakest-signal exponent alpha = log(s_r^2)/log(d) when s_r is supplied
    (alpha = 1, i.e. sqrt(1/d), otherwise)."""
    if signal_r is not None and d > 1:
        alpha = math.log(max(float(signal_r) ** 2, 1e-300)) / math.log(d)
        alpha = min(max(alpha, 0.0), 1.0)
    else:
        alpha = 1.0
    return math.sqrt(math.log(d) / T) + d ** (-alpha / 2.0)


def threshold_covariance(residuals, rule_kind="scad", lam=None, a=3.7, signal_r=None):
    """Entrywise-thresholded sample second-moment matrix of the residuals.

    residuals is T x d; the raw estimate is (1/T) sum_t e_t e_t'. Off-diagonal
    entries pass through the rule; diagonals are kept raw. When lam is None a
    rate-based default is used (see default_threshold_level).
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.ndim != 2:
        raise DimensionError("residuals must be a T x d matrix")
    T, d = residuals.shape
    if T < 2:
        raise DimensionError("need T >= 2 residual rows")
    if lam is None:
        lam = default_threshold_level(d, T, signal_r)
    if lam < 0:
        raise DataError(f"lambda must be >= 0, got {lam}")
    rule = ThresholdRule(rule_kind, float(lam), a)

    sample = residuals.T @ residuals
    sample /= T
    _symmetrize_inplace(sample)
    nnz = threshold_inplace(sample, THRESHOLD_KIND[rule.kind], rule.lam, rule.a, True)
    return ThresholdedCov(matrix=sample, lambda_used=rule.lam, rule=rule, nnz_offdiag=nnz)


def gamma1_diagonal(fit, residuals, h=0):
    """Factor-variance estimate under cross-sectionally independent errors:
    sum_j B_j B_j' (1/T) sum_{t<=T-h} e_jt^2."""
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.ndim != 2:
        raise DimensionError("residuals must be a T x d matrix")
    T = residuals.shape[0]
    if not 0 <= h < T:
        raise DimensionError(f"need 0 <= h < T, got h={h}")
    b = b_matrix(fit)
    if b.shape[0] != residuals.shape[1]:
        raise DimensionError(
            f"residual columns {residuals.shape[1]} do not match d={b.shape[0]}"
        )
    var = np.sum(residuals[: T - h] ** 2, axis=0) / T
    gamma = (b * var[:, None]).T @ b
    return (gamma + gamma.T) / 2.0


def _psd_repair(gamma, what):
    gamma = (gamma + gamma.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(gamma)
    if eigvals[0] < -1e-8:
        raise NumericalError(
            f"{what} has eigenvalue {eigvals[0]:.3e} below the -1e-8 repair floor"
        )
    if eigvals[0] < 0.0:
        eigvals = np.clip(eigvals, 0.0, None)
        gamma = (eigvecs * eigvals) @ eigvecs.T
        gamma = (gamma + gamma.T) / 2.0
    return gamma


def gamma2_thresholded(fit, cov):
    """Factor-variance estimate B' Sigma_e^T B from a thresholded covariance."""
    b = b_matrix(fit)
    if cov.matrix.shape[0] != b.shape[0]:
        raise DimensionError(
            f"covariance dim {cov.matrix.shape[0]} does not match d={b.shape[0]}"
        )
    gamma = b.T @ cov.matrix @ b
    return _psd_repair(gamma, "thresholded factor variance")


def gamma2_from_residuals(fit_or_b, residuals, rule_kind="scad", lam=None, a=3.7,
                          signal_r=None):
    """Memory-lean equivalent of gamma2_thresholded(threshold_covariance(...)).

    Builds the sample covariance once, thresholds it in place, and contracts
    with B without materializing a ThresholdedCov. fit_or_b may be a CpFit or
    a precomputed d x r matrix.
    """
    b = fit_or_b if isinstance(fit_or_b, np.ndarray) else b_matrix(fit_or_b)
    residuals = np.asarray(residuals, dtype=np.float64)
    T, d = residuals.shape
    if b.shape[0] != d:
        raise DimensionError(f"residual columns {d} do not match d={b.shape[0]}")
    if lam is None:
        lam = default_threshold_level(d, T, signal_r)
    rule = ThresholdRule(rule_kind, float(lam), a)
    sample = residuals.T @ residuals
    sample /= T
    _symmetrize_inplace(sample)
    threshold_inplace(sample, THRESHOLD_KIND[rule.kind], rule.lam, rule.a, True)
    gamma = b.T @ (sample @ b)
    del sample
    return _psd_repair(gamma, "thresholded factor variance")


def hac_gamma(loadings_vec, residuals, n, t_divisor=None):
    """Cross-sectional HAC-type factor variance over the first n indices:
    (1/n) sum_{j,l<=n} L_j L_l' (1/T) sum_t e_jt e_lt."""
    loadings_vec = np.asarray(loadings_vec, dtype=np.float64)
    residuals = np.asarray(residuals, dtype=np.float64)
    if loadings_vec.ndim != 2 or residuals.ndim != 2:
        raise DimensionError("loadings and residuals must be matrices")
    d = loadings_vec.shape[0]
    if residuals.shape[1] != d:
        raise DimensionError("residual columns must match loading rows")
    if not 1 <= n <= d:
        raise DimensionError(f"need 1 <= n <= {d}, got n={n}")
    t_div = residuals.shape[0] if t_divisor is None else int(t_divisor)
    en = residuals[:, :n]
    sn = en.T @ en / t_div
    ln = loadings_vec[:n]
    gamma = ln.T @ sn @ ln / n
    return (gamma + gamma.T) / 2.0


def kron_toeplitz_autocov(tau, d1, q):
    """Autocovariance ladder of a Toeplitz(tau, d1) (x) Toeplitz(tau, d1)
    error covariance along the canonical vec index: gamma_q = tau^(m+s) with
    q = m*d1 + s, 0 <= s < d1. Satisfies gamma_{q+d1} = tau * gamma_q."""
    if not 0.0 <= tau < 1.0:
        raise DataError(f"tau must be in [0, 1), got {tau}")
    d1 = int(d1)
    q = int(q)
    if d1 < 1:
        raise DataError("d1 must be >= 1")
    if not 0 <= q < d1 * d1:
        raise DataError(f"q must satisfy 0 <= q < d1^2, got {q}")
    m, s = divmod(q, d1)
    return float(tau ** (m + s))
