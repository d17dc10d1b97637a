"""Data-generating processes for the Monte-Carlo experiments.

Factor strengths follow s_i = (r - i + 1) * sqrt(d^alpha); loadings are
QR-orthonormalized Gaussians pushed through the error-covariance square root
and renormalized to unit Euclidean norm (the "scaled" variant skips the
renormalization); errors are mode-wise Toeplitz-correlated Gaussian or raw
Student-t innovations. AR(1) factors carry sqrt(1 - rho^2) innovation scale
so every factor column has unit population variance.

To keep y_t = beta' (regressors at t - h) + eps_t defined for every
in-sample t, regressors are simulated for h presample periods; the
observable tensor series covers t = 1..T only.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DataError
from .tensor import TensorSeries, kr_chain

__all__ = [
    "ErrorSpec",
    "FactorSpec",
    "RegressionSpec",
    "HdSpec",
    "DgpConfig",
    "Truth",
    "generate",
    "toeplitz_matrix",
    "toeplitz_sqrt",
]

_SQRT_CACHE = {}


def toeplitz_matrix(tau, d):
    return scipy.linalg.toeplitz(tau ** np.arange(d, dtype=np.float64))


def toeplitz_sqrt(tau, d):
    """Symmetric eigendecomposition square root of Toeplitz(tau, d), cached."""
    key = (float(tau), int(d))
    if key not in _SQRT_CACHE:
        w, v = np.linalg.eigh(toeplitz_matrix(tau, d))
        _SQRT_CACHE[key] = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return _SQRT_CACHE[key]


@dataclass(frozen=True)
class ErrorSpec:
    kind: str = "gaussian_toeplitz"   # or "student_t"
    tau: float = 0.5
    df: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian_toeplitz", "student_t"):
            raise DataError(f"unknown error kind {self.kind!r}")
        if not 0.0 <= self.tau < 1.0:
            raise DataError(f"tau must be in [0, 1), got {self.tau}")
        if self.kind == "student_t" and (self.df is None or self.df <= 2):
            raise DataError("student_t errors need df > 2")


@dataclass(frozen=True)
class FactorSpec:
    kind: str = "independent_ar"      # or "correlated_ar"
    sigma_f_tau: float = 0.5          # Toeplitz parameter of Sigma_f

    def __post_init__(self):
        if self.kind not in ("independent_ar", "correlated_ar"):
            raise DataError(f"unknown factor kind {self.kind!r}")


@dataclass(frozen=True)
class RegressionSpec:
    beta0: float = 0.5                # intercept-side coefficient
    beta1: tuple = (0.5, 0.5, 0.5)    # factor coefficients
    hetero: bool = True               # eps_t ~ N(0, nu_t), nu_t ~ U[0.5, 1.5]


@dataclass(frozen=True)
class HdSpec:
    p: int = 200
    p0: int = 3
    beta0_value: float = 0.5
    lambda_law: str = "uniform"       # entries of Lambda ~ U[-1, 1], or "zero"
    v_kind: str = "iid"               # or "toeplitz"
    v_tau: float = 0.5

    def __post_init__(self):
        if self.lambda_law not in ("uniform", "zero"):
            raise DataError(f"unknown lambda law {self.lambda_law!r}")
        if self.v_kind not in ("iid", "toeplitz"):
            raise DataError(f"unknown V kind {self.v_kind!r}")
        if not 0 <= self.p0 <= self.p:
            raise DataError("need 0 <= p0 <= p")


@dataclass(frozen=True)
class DgpConfig:
    dims: tuple
    T: int
    r: int = 3
    alpha: object = 0.6               # scalar or per-factor sequence
    rho: tuple = (0.6, 0.5, 0.4)
    error: ErrorSpec = field(default_factory=ErrorSpec)
    factor: FactorSpec = field(default_factory=FactorSpec)
    loading_spec: str = "normalized"  # or "scaled" (no unit-norm step)
    loading_tau: float | None = None  # defaults to error.tau
    regression: RegressionSpec = field(default_factory=RegressionSpec)
    hd: HdSpec | None = None
    h: int = 1

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "rho", tuple(float(x) for x in self.rho))
        if any(d < 1 for d in self.dims):
            raise DataError("dims must be positive")
        if self.T < 2:
            raise DataError("need T >= 2")
        if self.r < 1 or self.r > min(self.dims):
            raise DataError("need 1 <= r <= min(dims)")
        if len(self.rho) != self.r:
            raise DataError("rho must have one entry per factor")
        if any(not -1.0 < x < 1.0 for x in self.rho):
            raise DataError("rho entries must be in (-1, 1)")
        if self.loading_spec not in ("normalized", "scaled"):
            raise DataError(f"unknown loading spec {self.loading_spec!r}")
        if len(self.regression.beta1) != self.r:
            raise DataError("regression.beta1 must have one entry per factor")
        if self.h < 0:
            raise DataError("h must be >= 0")

    @property
    def d(self):
        return int(np.prod(self.dims))

    def alphas(self):
        if np.isscalar(self.alpha):
            return np.full(self.r, float(self.alpha))
        arr = np.asarray(self.alpha, dtype=np.float64)
        if arr.size != self.r:
            raise DataError("alpha must be scalar or one entry per factor")
        return arr

    def signal_values(self):
        alphas = self.alphas()
        return np.array(
            [
                (self.r - i + 1) * math.sqrt(self.d ** alphas[i - 1])
                for i in range(1, self.r + 1)
            ]
        )


@dataclass
class Truth:
    """Everything the simulator knows: in-sample factors/regressors, the
    drawn parameters, the target path, and the conditional mean of y_{T+h}."""

    factors: np.ndarray
    loadings: list
    signals: np.ndarray
    y: np.ndarray
    w: np.ndarray
    cond_mean: float
    eps: np.ndarray
    v: np.ndarray | None = None
    lam: np.ndarray | None = None
    errors: np.ndarray | None = None


def _draw_loadings(cfg, rng):
    tau = cfg.error.tau if cfg.loading_tau is None else cfg.loading_tau
    loadings = []
    for dk in cfg.dims:
        raw = rng.standard_normal((dk, cfg.r))
        q, _ = np.linalg.qr(raw)
        sig_half = toeplitz_sqrt(tau, dk)
        cols = sig_half @ q
        if cfg.loading_spec == "normalized":
            cols = cols / np.linalg.norm(cols, axis=0)
        loadings.append(cols)
    return loadings


def _draw_factors(cfg, rng, n_rows):
    r = cfg.r
    rho = np.asarray(cfg.rho)
    innov_scale = np.sqrt(1.0 - rho**2)
    g = np.empty((n_rows, r))
    g[0] = rng.standard_normal(r)
    shocks = rng.standard_normal((n_rows - 1, r)) * innov_scale
    for t in range(1, n_rows):
        g[t] = rho * g[t - 1] + shocks[t - 1]
    if cfg.factor.kind == "correlated_ar":
        g = g @ toeplitz_sqrt(cfg.factor.sigma_f_tau, r)
    return g


def _draw_noise(cfg, rng):
    shape = (cfg.T,) + cfg.dims
    if cfg.error.kind == "student_t":
        z = rng.standard_t(cfg.error.df, size=shape)
    else:
        z = rng.standard_normal(shape)
    for k, dk in enumerate(cfg.dims):
        half = toeplitz_sqrt(cfg.error.tau, dk)
        z = np.moveaxis(np.moveaxis(z, k + 1, -1) @ half, -1, k + 1)
    return z


def _draw_eps(cfg, rng, n):
    if cfg.error.kind == "student_t":
        return rng.standard_t(cfg.error.df, size=n)
    if cfg.regression.hetero:
        nu = rng.uniform(0.5, 1.5, size=n)
        return rng.standard_normal(n) * np.sqrt(nu)
    return rng.standard_normal(n)


def generate(cfg, seed, keep_errors=False):
    """Simulate one replication: returns (TensorSeries, Truth).

    Reproducible for a given (cfg, seed); draws follow a fixed order
    (loadings, factors, tensor noise, high-dimensional blocks, regression
    noise).
    """
    rng = np.random.default_rng(seed)
    T, h, r = cfg.T, cfg.h, cfg.r
    loadings = _draw_loadings(cfg, rng)
    signals = cfg.signal_values()

    f_ext = _draw_factors(cfg, rng, T + h)      # rows are times 1-h .. T
    f_in = f_ext[h:]                            # times 1 .. T

    noise = _draw_noise(cfg, rng)
    chain = kr_chain(loadings)
    scores = f_in * signals
    K = len(cfg.dims)
    signal_stack = (scores @ chain.T).reshape(T, *cfg.dims[::-1]).transpose(
        [0] + list(range(K, 0, -1))
    )
    stack = signal_stack + noise
    series = TensorSeries.from_stack(stack)

    reg = cfg.regression
    beta1 = np.asarray(reg.beta1, dtype=np.float64)
    if cfg.hd is None:
        w_ext = np.ones((T + h, 1))
        beta0_vec = np.array([reg.beta0])
        mean_ext = w_ext @ beta0_vec + f_ext @ beta1
        v_ext = None
        lam = None
    else:
        hd = cfg.hd
        z_ext = np.hstack([np.ones((T + h, 1)), f_ext])
        if hd.lambda_law == "uniform":
            lam = rng.uniform(-1.0, 1.0, size=(hd.p, r + 1))
        else:
            lam = np.zeros((hd.p, r + 1))
        if hd.v_kind == "toeplitz":
            v_ext = rng.standard_normal((T + h, hd.p)) @ toeplitz_sqrt(hd.v_tau, hd.p)
        else:
            v_ext = rng.standard_normal((T + h, hd.p))
        w_ext = z_ext @ lam.T + v_ext
        beta0_vec = np.zeros(hd.p)
        beta0_vec[: hd.p0] = hd.beta0_value
        beta1_z = np.concatenate([[reg.beta0], beta1])
        mean_ext = w_ext @ beta0_vec + z_ext @ beta1_z

    eps = _draw_eps(cfg, rng, T)
    y = mean_ext[:T] + eps          # y_t = mean(regressors at t-h) + eps_t
    cond_mean = float(mean_ext[-1])  # conditional mean of y_{T+h}

    truth = Truth(
        factors=f_in,
        loadings=loadings,
        signals=signals,
        y=y,
        w=w_ext[h:],
        cond_mean=cond_mean,
        eps=eps,
        v=None if v_ext is None else v_ext[h:],
        lam=lam,
        errors=noise if keep_errors else None,
    )
    return series, truth
