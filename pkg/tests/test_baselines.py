import numpy as np
import pytest

from tensordi import (
    DimensionError,
    TensorSeries,
    kr_chain,
    pca_fit,
    pca_prediction_interval,
)
from tensordi.cpfactor import cc_iso

from conftest import make_rank1_series
from test_cpfactor import make_rank_r_series, subspace_distance


def test_pca_rank1_loading_matches_chain(rng):
    stack, vecs, f = make_rank1_series(rng, dims=(6, 5), T=40)
    series = TensorSeries.from_stack(stack)
    fit = pca_fit(series, 1)
    chain = kr_chain([v.reshape(-1, 1) for v in vecs])[:, 0]
    direction = fit.loadings[:, 0] / np.linalg.norm(fit.loadings[:, 0])
    assert min(
        np.linalg.norm(direction - chain), np.linalg.norm(direction + chain)
    ) <= 1e-8


def test_pca_factor_normalization(rng):
    series, *_ = make_rank_r_series(rng, (7, 6), 2, 35, (9.0, 5.0))
    noisy = TensorSeries.from_stack(
        series.stack + 0.2 * rng.standard_normal(series.stack.shape)
    )
    fit = pca_fit(noisy, 2)
    gram = fit.factors.T @ fit.factors / 35
    assert np.allclose(gram, np.eye(2), atol=1e-10)
    assert fit.eigenvalues[0] >= fit.eigenvalues[1] > 0


def test_pca_dual_matches_primal_oracle(rng):
    # d=12 < T=30 runs the primal path; the dual eigen-decomposition is the
    # oracle it must agree with
    stack = rng.standard_normal((30, 4, 3))
    series = TensorSeries.from_stack(stack)
    fit = pca_fit(series, 2)
    x = series.vec_matrix()
    gram = x @ x.T / (12 * 30)
    w, v = np.linalg.eigh(gram)
    factors = np.sqrt(30) * v[:, ::-1][:, :2]
    loadings = x.T @ factors / 30
    for i in range(2):
        s = np.sign(factors[:, i] @ fit.factors[:, i])
        assert np.allclose(s * factors[:, i], fit.factors[:, i], atol=1e-8)
        assert np.allclose(s * loadings[:, i], fit.loadings[:, i], atol=1e-8)
    assert np.allclose(fit.eigenvalues, w[::-1][:2], atol=1e-12)


def test_pca_rank_bounds(rng):
    series = TensorSeries.from_stack(rng.standard_normal((10, 3, 3)))
    with pytest.raises(DimensionError):
        pca_fit(series, 0)
    with pytest.raises(DimensionError):
        pca_fit(series, 10)


def test_pca_and_cciso_span_same_space_noiseless(rng):
    series, loadings, _ = make_rank_r_series(rng, (8, 7), 2, 60, (12.0, 6.0))
    cp = cc_iso(series, 2)
    pca = pca_fit(series, 2)
    chain = kr_chain(cp.loadings)
    assert subspace_distance(pca.loadings, chain) <= 1e-6


def test_pca_interval_degenerate_zero_variance(rng):
    # noiseless data and exact-factor target: residuals vanish, both terms 0
    series, loadings, f = make_rank_r_series(rng, (6, 5), 2, 80, (10.0, 5.0))
    pca = pca_fit(series, 2)
    y = np.empty(80)
    y[1:] = pca.factors[:-1] @ np.array([0.4, -0.3])
    y[0] = 0.0
    presid = series.vec_matrix() - pca.factors @ pca.loadings.T
    pi = pca_prediction_interval(
        pca, y, None, "threshold", 0.95, h=1, residuals=presid
    )
    assert pi.std <= 1e-8
    assert pi.lower == pytest.approx(pi.upper, abs=1e-8)


def test_pca_interval_needs_residual_source(rng):
    series, *_ = make_rank_r_series(rng, (6, 5), 2, 60, (9.0, 5.0))
    pca = pca_fit(series, 2)
    y = rng.standard_normal(60)
    with pytest.raises(DimensionError):
        pca_prediction_interval(pca, y, None, "threshold", 0.95)
    with pytest.raises(DimensionError):
        pca_prediction_interval(
            pca, y, None, "banana", 0.95, x_mat=series.vec_matrix()
        )


def test_pca_interval_hac_and_threshold_run(rng):
    series, *_ = make_rank_r_series(rng, (6, 5), 2, 60, (9.0, 5.0))
    noisy = TensorSeries.from_stack(
        series.stack + 0.3 * rng.standard_normal(series.stack.shape)
    )
    pca = pca_fit(noisy, 2)
    y = 0.5 + noisy.vec_matrix()[:, 0] * 0.0 + np.concatenate(
        [[0.0], (pca.factors[:-1] @ np.array([0.5, 0.5]))]
    ) + 0.1 * rng.standard_normal(60)
    w = np.ones((60, 1))
    for kind in ("threshold", "hac"):
        pi = pca_prediction_interval(
            pca, y, w, kind, 0.95, h=1, x_mat=noisy.vec_matrix()
        )
        assert pi.upper > pi.lower
        assert pi.decomposition[0] >= 0 and pi.decomposition[1] >= 0
