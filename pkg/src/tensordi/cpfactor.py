"""CP tensor factor estimation by iterated simultaneous orthogonalization.

Loadings are updated one column at a time as the top eigenvector of the
contemporary covariance of the partially-contracted series; signals and
factors follow from the final contraction. Loadings keep unit Euclidean
columns; factor strength lives in the signal vector.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericalError
from .tensor import kr_chain, multi_mode_contract_series, unfold_series

__all__ = [
    "CcIsoConfig",
    "CpFit",
    "initialize_loadings",
    "cc_iso",
    "select_rank",
    "residual_tensors",
    "b_matrix",
]

_EIGH_CUTOFF = 64  # use a full symmetric eigendecomposition below this size


@dataclass
class CcIsoConfig:
    """Options for the alternating eigenvector iteration.

    init is "composite_pca" (default warm start: top-r principal components
    of the vectorized series, each reshaped and split into its best rank-1
    mode vectors), "unfolded_pca" (top-r eigenvectors of each mode's pooled
    unfolding covariance; cheaper but fragile under weak signals with
    cross-sectionally correlated noise), or a user-supplied list of K
    initial loading matrices. The sign convention makes each loading
    column's largest-magnitude entry positive (ties broken by lowest index).
    """

    max_iterations: int = 100
    tolerance: float = 1e-5
    init: object = "composite_pca"
    sign_convention: str = "max_abs_positive"
    seed: int = 0
    power_tol: float = 1e-10
    power_max_iter: int = 5000

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.sign_convention != "max_abs_positive":
            raise ValueError(f"unknown sign convention {self.sign_convention!r}")


@dataclass
class CpFit:
    """Estimated CP factor model.

    loadings[k] is d_k x r with unit-norm columns; signals is positive and
    non-increasing; factors is T x r. final_gap is the last subspace-distance
    stopping statistic, gap_history the per-iteration trace.
    """

    loadings: list
    signals: np.ndarray
    factors: np.ndarray
    rank: int
    iterations_used: int = 0
    converged: bool = True
    final_gap: float = 0.0
    gap_history: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64).reshape(-1)
        self.factors = np.asarray(self.factors, dtype=np.float64)
        if self.factors.ndim != 2 or self.factors.shape[1] != self.rank:
            raise DimensionError("factors must be T x rank")
        if self.signals.size != self.rank:
            raise DimensionError("signals length must equal rank")
        if self.rank > 0:
            if np.any(self.signals <= 0):
                raise NumericalError("signals must be strictly positive")
            if np.any(np.diff(self.signals) > 0):
                raise NumericalError("signals must be non-increasing")
        for k, a in enumerate(self.loadings):
            a = np.asarray(a, dtype=np.float64)
            if a.ndim != 2 or a.shape[1] != self.rank:
                raise DimensionError(f"loading {k + 1} must be d_k x rank")
            if self.rank > 0:
                norms = np.linalg.norm(a, axis=0)
                if np.any(np.abs(norms - 1.0) > 1e-10):
                    raise NumericalError(
                        f"loading {k + 1} columns must have unit norm"
                    )
            self.loadings[k] = a

    @property
    def dims(self):
        return tuple(a.shape[0] for a in self.loadings)

    @property
    def n_obs(self):
        return self.factors.shape[0]

    def to_dict(self):
        return {
            "schema_version": 1,
            "rank": self.rank,
            "dims": list(self.dims),
            "loadings": [a.tolist() for a in self.loadings],
            "signals": self.signals.tolist(),
            "factors": self.factors.tolist(),
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "final_gap": self.final_gap,
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            loadings=[np.asarray(a, dtype=np.float64) for a in payload["loadings"]],
            signals=np.asarray(payload["signals"], dtype=np.float64),
            factors=np.asarray(payload["factors"], dtype=np.float64),
            rank=int(payload["rank"]),
            iterations_used=int(payload.get("iterations_used", 0)),
            converged=bool(payload.get("converged", True)),
            final_gap=float(payload.get("final_gap", 0.0)),
        )

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _fix_sign(v):
    idx = int(np.argmax(np.abs(v)))
    if v[idx] < 0:
        return -v
    return v


def _top_eigvec(sig, start, cfg):
    d = sig.shape[0]
    if d <= _EIGH_CUTOFF:
        _, vecs = np.linalg.eigh(sig)
        return vecs[:, -1]
    v = np.asarray(start, dtype=np.float64)
    nv = np.linalg.norm(v)
    if nv == 0:
        v = np.ones(d) / np.sqrt(d)
    else:
        v = v / nv
    for _ in range(cfg.power_max_iter):
        w = sig @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        w /= nw
        gap = 1.0 - min(1.0, abs(float(w @ v)))
        v = w
        if gap <= cfg.power_tol:
            return v
    # slow spectral gap: fall back to the exact decomposition
    _, vecs = np.linalg.eigh(sig)
    return vecs[:, -1]


def _b_from_a(a, mode, iteration):
    gram = a.T @ a
    ev = np.linalg.eigvalsh(gram)
    if ev[0] <= 1e-12 * max(ev[-1], 1.0):
        raise NumericalError(
            f"collinear estimated loadings in mode {mode} at iteration {iteration}"
        )
    return np.linalg.solve(gram, a.T).T


def _rank1_split(vec, dims, sweeps=5):
    """Best rank-1 mode vectors of a canonical-vec tensor (unit norms)."""
    arr = vec.reshape(dims, order="F")
    K = len(dims)
    # warm start from each unfolding's top left singular vector
    vs = []
    for k in range(K):
        mat = np.moveaxis(arr, k, 0).reshape(dims[k], -1, order="F")
        u, _, _ = np.linalg.svd(mat, full_matrices=False)
        vs.append(u[:, 0])
    if K == 1:
        v = vs[0]
        return [_fix_sign(v / np.linalg.norm(v))]
    for _ in range(sweeps):
        for k in range(K):
            z = arr
            for mode in range(K - 1, -1, -1):
                if mode == k:
                    continue
                z = np.moveaxis(z, mode, -1) @ vs[mode]
            norm = np.linalg.norm(z)
            if norm == 0:
                raise NumericalError("degenerate principal component")
            vs[k] = z / norm
    return [_fix_sign(v) for v in vs]


def _composite_pca_init(series, r):
    """Top-r principal components of vec(X_t), each split into rank-1
    mode vectors."""
    x = series.vec_matrix()
    T, d = x.shape
    if T < d:
        gram = x @ x.T
        _, vecs = np.linalg.eigh(gram)
        comps = x.T @ vecs[:, -r:][:, ::-1]  # d x r vec-loadings, descending
    else:
        cov = x.T @ x
        _, vecs = np.linalg.eigh(cov)
        comps = vecs[:, -r:][:, ::-1]
    mats = [np.empty((dk, r)) for dk in series.dims]
    for i in range(r):
        parts = _rank1_split(comps[:, i], series.dims)
        for k, v in enumerate(parts):
            mats[k][:, i] = v
    return mats


def initialize_loadings(series, r, cfg=None):
    """Warm-start loadings per cfg.init ("composite_pca" default,
    "unfolded_pca", or user-supplied matrices)."""
    cfg = cfg or CcIsoConfig()
    dims = series.dims
    T = len(series)
    if r < 1:
        raise DimensionError("rank must be >= 1")
    if r > min(dims):
        raise DimensionError(
            f"rank {r} exceeds the smallest mode size {min(dims)}"
        )
    if T < 2:
        raise DimensionError("series must have T >= 2")
    if not np.any(series.stack):
        raise NumericalError("degenerate series: all slices are zero")

    if not isinstance(cfg.init, str):
        mats = [np.asarray(a, dtype=np.float64) for a in cfg.init]
        if len(mats) != len(dims):
            raise DimensionError("need one initial loading matrix per mode")
        out = []
        for k, a in enumerate(mats):
            if a.shape != (dims[k], r):
                raise DimensionError(
                    f"initial loading {k + 1} must be {dims[k]} x {r}"
                )
            norms = np.linalg.norm(a, axis=0)
            if np.any(norms <= 0):
                raise NumericalError("initial loading column with zero norm")
            out.append(a / norms)
        return out

    if cfg.init == "composite_pca":
        return _composite_pca_init(series, r)
    if cfg.init != "unfolded_pca":
        raise DimensionError(f"unknown init {cfg.init!r}")

    out = []
    for k in range(1, len(dims) + 1):
        arr = unfold_series(series, k)  # (T, d_k, d/d_k)
        cov = np.tensordot(arr, arr, axes=([0, 2], [0, 2])) / T
        _, vecs = np.linalg.eigh(cov)
        top = vecs[:, ::-1][:, :r]
        top = np.column_stack([_fix_sign(top[:, i]) for i in range(r)])
        out.append(top)
    return out


def cc_iso(series, r, cfg=None):
    """Fit the CP factor model by alternating top-eigenvector updates.

    Sweeps factors in order i = 1..r and modes k = 1..K within each
    iteration; for the (i, k) update, modes before k use this iteration's
    loadings and modes after k the previous iteration's, with the B matrices
    refreshed after every column update. Stops when the largest column
    subspace distance between consecutive iterations falls below
    cfg.tolerance. Non-convergence is flagged, not raised.
    """
    cfg = cfg or CcIsoConfig()
    A = initialize_loadings(series, r, cfg)
    K = len(series.dims)
    T = len(series)
    stack = series.stack
    B = [_b_from_a(A[k], k + 1, 0) for k in range(K)]

    gap_history = []
    converged = False
    gap = np.inf
    sweeps = 0
    for m in range(1, cfg.max_iterations + 1):
        prev = [a.copy() for a in A]
        for i in range(r):
            for k in range(K):
                z = stack
                # contract every mode except k with factor i's b-vectors
                for mode in range(K - 1, -1, -1):
                    if mode == k:
                        continue
                    z = np.moveaxis(z, mode + 1, -1) @ B[mode][:, i]
                sig = (z.T @ z) / T
                v = _fix_sign(_top_eigvec(sig, A[k][:, i], cfg))
                A[k] = A[k].copy()
                A[k][:, i] = v
                B[k] = _b_from_a(A[k], k + 1, m)
        sweeps = m
        gap = 0.0
        for k in range(K):
            dots = np.einsum("ji,ji->i", A[k], prev[k])
            # sin of the column angle via the orthogonal component, which
            # stays accurate near zero (sqrt(1 - dot^2) floors at sqrt(eps))
            ortho = A[k] - prev[k] * dots
            sines = np.linalg.norm(ortho, axis=0)
            gap = max(gap, float(np.max(sines)))
        gap_history.append(gap)
        if gap <= cfg.tolerance:
            converged = True
            break

    scores = np.column_stack(
        [multi_mode_contract_series(series, [B[k][:, i] for k in range(K)]) for i in range(r)]
    )
    signals = np.sqrt(np.mean(scores**2, axis=0))
    if np.any(~np.isfinite(signals)) or np.any(signals <= 0):
        raise NumericalError("degenerate fit: estimated signal is zero")
    factors = scores / signals

    order = np.argsort(-signals, kind="stable")
    signals = signals[order]
    factors = factors[:, order]
    A = [a[:, order] for a in A]

    return CpFit(
        loadings=A,
        signals=signals,
        factors=factors,
        rank=r,
        iterations_used=sweeps,
        converged=converged,
        final_gap=float(gap),
        gap_history=tuple(gap_history),
    )


def select_rank(series, r_max):
    """Eigenvalue-ratio rank estimate from the pooled vectorized covariance.

    Uses the top min(r_max + 1, T, d) eigenvalues of
    (1/(dT)) sum_t vec(X_t) vec(X_t)', computed on the T x T gram dual when
    T < d. Ties break toward the first index.
    """
    dims = series.dims
    d = series.d
    T = len(series)
    if not 1 <= r_max < min(dims):
        raise DimensionError(
            f"r_max must satisfy 1 <= r_max < {min(dims)}, got {r_max}"
        )
    x = series.vec_matrix()
    if T < d:
        gram = (x @ x.T) / (d * T)
    else:
        gram = (x.T @ x) / (d * T)
    eigvals = np.linalg.eigvalsh(gram)[::-1]
    m = min(r_max + 1, eigvals.size)
    lam = np.maximum(eigvals[:m], 0.0)
    n_ratio = m - 1
    ratios = np.empty(n_ratio)
    for i in range(n_ratio):
        if lam[i + 1] > 0.0:
            ratios[i] = lam[i] / lam[i + 1]
        else:
            ratios[i] = np.inf if lam[i] > 0.0 else 1.0
    return int(np.argmax(ratios)) + 1


def residual_vec_matrix(series, fit):
    """T x d matrix of vectorized residuals (no tensor container round trip)."""
    if fit.rank == 0:
        return series.vec_matrix().copy()
    if fit.dims != series.dims:
        raise DimensionError(
            f"fit dims {fit.dims} do not match series dims {series.dims}"
        )
    if fit.n_obs != len(series):
        raise DimensionError("fit length does not match series length")
    chain = kr_chain(fit.loadings)
    scores = fit.factors * fit.signals
    return series.vec_matrix() - scores @ chain.T


def residual_tensors(series, fit):
    """Idiosyncratic residual series: X_t minus the fitted rank-r signal part."""
    vec_res = residual_vec_matrix(series, fit)
    K = len(series.dims)
    stack = vec_res.reshape(len(series), *series.dims[::-1]).transpose(
        [0] + list(range(K, 0, -1))
    )
    return series.__class__.from_stack(stack, series.timestamps)


def b_matrix(fit):
    """d x r matrix whose column i is the Kronecker chain of the
    gram-corrected loadings; satisfies B' (loading chain) = I_r."""
    bs = [_b_from_a(a, k + 1, fit.iterations_used) for k, a in enumerate(fit.loadings)]
    return kr_chain(bs)
