import numpy as np
import pytest

from tensordi import (
    CcIsoConfig,
    CpFit,
    DimensionError,
    NumericalError,
    TensorSeries,
    b_matrix,
    cc_iso,
    initialize_loadings,
    kr_chain,
    residual_tensors,
    select_rank,
)
from tensordi.cpfactor import residual_vec_matrix

from conftest import make_rank1_series


def subspace_distance(u, v):
    """sin of the principal angle between two unit vectors/column spans."""
    u = u / np.linalg.norm(u, axis=0)
    v = v / np.linalg.norm(v, axis=0)
    if u.ndim == 1 or u.shape[1] == 1:
        c = abs(float(u.reshape(-1) @ v.reshape(-1)))
        return np.sqrt(max(0.0, 1.0 - min(1.0, c * c)))
    qu, _ = np.linalg.qr(u)
    qv, _ = np.linalg.qr(v)
    s = np.linalg.svd(qu.T @ qv, compute_uv=False)
    return np.sqrt(max(0.0, 1.0 - min(1.0, s.min() ** 2)))


def make_rank_r_series(rng, dims, r, T, signals, oblique=False):
    loadings = []
    for d in dims:
        q, _ = np.linalg.qr(rng.standard_normal((d, r)))
        if oblique:
            mix = np.eye(r) + 0.3 * np.ones((r, r))
            q = q @ mix
            q /= np.linalg.norm(q, axis=0)
        loadings.append(q)
    f = rng.standard_normal((T, r))
    chain = kr_chain(loadings)
    vec = (f * np.asarray(signals)) @ chain.T
    stack = vec.reshape((T,) + tuple(dims[::-1])).transpose(
        [0] + list(range(len(dims), 0, -1))
    )
    return TensorSeries.from_stack(stack), loadings, f


def test_initialize_rank1_subspace(rank1_series):
    stack, vecs, _ = rank1_series
    series = TensorSeries.from_stack(stack)
    init = initialize_loadings(series, 1)
    assert subspace_distance(init[0][:, 0], vecs[0]) <= 1e-8
    assert subspace_distance(init[1][:, 0], vecs[1]) <= 1e-8


def test_initialize_errors(rng):
    series = TensorSeries.from_stack(rng.standard_normal((10, 4, 3)))
    with pytest.raises(DimensionError):
        initialize_loadings(series, 4)
    with pytest.raises(NumericalError):
        initialize_loadings(TensorSeries.from_stack(np.zeros((5, 3, 3))), 1)
    with pytest.raises(DimensionError):
        initialize_loadings(TensorSeries.from_stack(rng.standard_normal((1, 4, 3))), 1)


def test_initialize_rank2_span_matches_eigendecomposition(rng):
    series, loadings, _ = make_rank_r_series(
        rng, (8, 7), 2, 50, (10.0, 5.0)
    )
    init = initialize_loadings(series, 2)
    for k in range(2):
        assert subspace_distance(init[k], loadings[k]) <= 1e-6


def test_initialize_user_supplied(rng):
    series, loadings, _ = make_rank_r_series(rng, (6, 5), 2, 40, (8.0, 4.0))
    cfg = CcIsoConfig(init=[loadings[0], loadings[1]])
    init = initialize_loadings(series, 2, cfg)
    for k in range(2):
        assert np.allclose(np.linalg.norm(init[k], axis=0), 1.0, atol=1e-12)
    with pytest.raises(DimensionError):
        initialize_loadings(series, 2, CcIsoConfig(init=[loadings[0]]))


def test_cc_iso_rank1_exact_recovery(rank1_series):
    stack, vecs, f = rank1_series
    series = TensorSeries.from_stack(stack)
    fit = cc_iso(series, 1)
    assert fit.converged
    for k, v in enumerate(vecs):
        assert abs(float(fit.loadings[k][:, 0] @ v)) >= 1.0 - 1e-8
    s_true = 4.0 * np.sqrt(np.mean(f**2))
    assert fit.signals[0] == pytest.approx(s_true, rel=1e-8)


def test_cc_iso_zero_series_errors():
    with pytest.raises(NumericalError, match="degenerate"):
        cc_iso(TensorSeries.from_stack(np.zeros((6, 3, 3))), 1)


@pytest.mark.parametrize("K,r", [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2), (3, 3)])
def test_cc_iso_noiseless_exact_recovery(rng, K, r):
    dims = (6, 5, 4)[:K]
    signals = [9.0, 6.0, 3.0][:r]
    series, loadings, f = make_rank_r_series(rng, dims, r, 60, signals)
    fit = cc_iso(series, r)
    assert fit.converged
    for k in range(K):
        for i in range(r):
            assert abs(float(fit.loadings[k][:, i] @ loadings[k][:, i])) >= 1.0 - 1e-7
    resid = residual_vec_matrix(series, fit)
    assert np.max(np.abs(resid)) <= 1e-8


def test_cc_iso_noiseless_oblique_loadings(rng):
    series, loadings, _ = make_rank_r_series(
        rng, (7, 6), 2, 50, (10.0, 5.0), oblique=True
    )
    fit = cc_iso(series, 2)
    assert fit.converged
    for k in range(2):
        for i in range(2):
            assert abs(float(fit.loadings[k][:, i] @ loadings[k][:, i])) >= 1.0 - 1e-6


def test_cc_iso_gap_monotone_noiseless(rng):
    series, *_ = make_rank_r_series(rng, (7, 6), 2, 50, (10.0, 5.0), oblique=True)
    fit = cc_iso(series, 2, CcIsoConfig(tolerance=1e-12, max_iterations=50))
    gaps = np.asarray(fit.gap_history)
    assert np.all(np.diff(gaps) <= 1e-12)


def test_cc_iso_scaled_factor_identity(rng):
    series, *_ = make_rank_r_series(rng, (6, 5), 2, 40, (8.0, 4.0))
    noisy = TensorSeries.from_stack(
        series.stack + 0.3 * rng.standard_normal(series.stack.shape)
    )
    fit = cc_iso(noisy, 2)
    bs = [np.linalg.solve(a.T @ a, a.T).T for a in fit.loadings]
    for i in range(2):
        scores = noisy.stack
        for mode in range(1, -1, -1):
            scores = np.moveaxis(scores, mode + 1, -1) @ bs[mode][:, i]
        assert np.max(np.abs(fit.signals[i] * fit.factors[:, i] - scores)) <= 1e-12


def test_cc_iso_sign_invariance(rng):
    series, loadings, f = make_rank_r_series(rng, (6, 5), 2, 40, (8.0, 4.0))
    # flipping a loading column and the factor column leaves X_t unchanged,
    # so the fit (with the deterministic sign convention) is bitwise equal
    flipped = [loadings[0].copy(), loadings[1]]
    flipped[0][:, 0] *= -1.0
    f2 = f.copy()
    f2[:, 0] *= -1.0
    chain = kr_chain(flipped)
    vec = (f2 * np.array([8.0, 4.0])) @ chain.T
    stack = vec.reshape((40, 5, 6)).transpose(0, 2, 1)
    assert np.allclose(stack, series.stack, atol=1e-12)
    fit1 = cc_iso(series, 2)
    fit2 = cc_iso(TensorSeries.from_stack(stack), 2)
    for k in range(2):
        assert np.allclose(fit1.loadings[k], fit2.loadings[k], atol=1e-12)
    assert np.allclose(fit1.factors, fit2.factors, atol=1e-12)


def test_cc_iso_svd_oracle_k2_r1_noise_free(rng):
    stack, vecs, _ = make_rank1_series(rng, dims=(9, 7), T=40)
    series = TensorSeries.from_stack(stack)
    fit = cc_iso(series, 1)
    # oracle: top singular vectors of the stacked (T*d2) x d1 and
    # (T*d1) x d2 arrangements
    tall1 = stack.transpose(0, 2, 1).reshape(-1, 9)
    tall2 = stack.reshape(-1, 7)
    _, _, vt1 = np.linalg.svd(tall1, full_matrices=False)
    _, _, vt2 = np.linalg.svd(tall2, full_matrices=False)
    assert subspace_distance(fit.loadings[0][:, 0], vt1[0]) <= 1e-8
    assert subspace_distance(fit.loadings[1][:, 0], vt2[0]) <= 1e-8


def test_cc_iso_nonconvergence_flagged(rng):
    series, *_ = make_rank_r_series(rng, (6, 5), 2, 40, (8.0, 4.0))
    noisy = TensorSeries.from_stack(
        series.stack + 0.5 * rng.standard_normal(series.stack.shape)
    )
    fit = cc_iso(noisy, 2, CcIsoConfig(max_iterations=1, tolerance=1e-14))
    assert not fit.converged
    assert fit.iterations_used == 1
    assert fit.final_gap > 0


def test_select_rank_rank1(rank1_series):
    stack, *_ = rank1_series
    series = TensorSeries.from_stack(stack)
    assert select_rank(series, 3) == 1


def test_select_rank_bounds(rng):
    series = TensorSeries.from_stack(rng.standard_normal((10, 4, 4)))
    with pytest.raises(DimensionError):
        select_rank(series, 0)
    with pytest.raises(DimensionError):
        select_rank(series, 4)


def test_select_rank_pure_noise_first_index_tiebreak():
    series = TensorSeries.from_stack(np.zeros((6, 4, 4)))
    assert select_rank(series, 3) == 1


def test_residuals_noiseless_zero(rng):
    series, *_ = make_rank_r_series(rng, (6, 5), 2, 40, (8.0, 4.0))
    fit = cc_iso(series, 2)
    res = residual_tensors(series, fit)
    assert np.max(np.abs(res.stack)) <= 1e-10


def test_residuals_rank0_identity(rng):
    stack = rng.standard_normal((5, 3, 4))
    series = TensorSeries.from_stack(stack)
    empty = CpFit(
        loadings=[np.zeros((3, 0)), np.zeros((4, 0))],
        signals=np.zeros(0),
        factors=np.zeros((5, 0)),
        rank=0,
    )
    res = residual_tensors(series, empty)
    assert np.array_equal(res.stack, stack)


def test_residuals_dim_mismatch(rng):
    series, *_ = make_rank_r_series(rng, (6, 5), 2, 40, (8.0, 4.0))
    other = TensorSeries.from_stack(rng.standard_normal((40, 5, 6)))
    fit = cc_iso(series, 2)
    with pytest.raises(DimensionError):
        residual_tensors(other, fit)


def test_b_matrix_orthonormal_equals_chain(rng):
    series, loadings, _ = make_rank_r_series(rng, (6, 5), 2, 40, (8.0, 4.0))
    fit = cc_iso(series, 2)
    b = b_matrix(fit)
    chain = kr_chain(fit.loadings)
    assert np.allclose(b, chain, atol=1e-8)


def test_b_matrix_dual_to_loading_chain(rng):
    # random non-orthogonal loadings: B' (loading chain) = I exactly
    a1 = rng.standard_normal((5, 2))
    a2 = rng.standard_normal((5, 2))
    a1 /= np.linalg.norm(a1, axis=0)
    a2 /= np.linalg.norm(a2, axis=0)
    fit = CpFit(
        loadings=[a1, a2],
        signals=np.array([2.0, 1.0]),
        factors=np.zeros((4, 2)),
        rank=2,
    )
    b = b_matrix(fit)
    chain = kr_chain([a1, a2])
    assert np.allclose(b.T @ chain, np.eye(2), atol=1e-10)


def test_b_matrix_r1_normalization(rng):
    stack, vecs, _ = make_rank1_series(rng)
    series = TensorSeries.from_stack(stack)
    fit = cc_iso(series, 1)
    b = b_matrix(fit)
    chain = kr_chain(fit.loadings)
    assert float(b[:, 0] @ chain[:, 0]) == pytest.approx(1.0, abs=1e-10)


def test_cpfit_json_roundtrip(tmp_path, rng):
    series, *_ = make_rank_r_series(rng, (6, 5), 2, 40, (8.0, 4.0))
    fit = cc_iso(series, 2)
    path = tmp_path / "fit.json"
    fit.to_json(path)
    back = CpFit.from_json(path)
    assert back.rank == fit.rank
    assert np.allclose(back.signals, fit.signals)
    assert np.allclose(back.factors, fit.factors)
    for k in range(2):
        assert np.allclose(back.loadings[k], fit.loadings[k])


def test_cpfit_validation():
    with pytest.raises(NumericalError):
        CpFit(
            loadings=[np.ones((3, 1)), np.ones((3, 1))],
            signals=np.array([1.0]),
            factors=np.zeros((4, 1)),
            rank=1,
        )
    with pytest.raises(NumericalError):
        CpFit(
            loadings=[np.eye(3)[:, :1], np.eye(3)[:, :1]],
            signals=np.array([-1.0]),
            factors=np.zeros((4, 1)),
            rank=1,
        )


@pytest.mark.slow
def test_select_rank_monte_carlo_dgp():
    # r-hat = 3 in at least 95% of replications under the simulation design
    from tensordi.dgp import DgpConfig, generate

    cfg = DgpConfig(dims=(40, 40), T=500, r=3, alpha=0.6)
    hits = 0
    n = 200
    for i in range(n):
        series, _ = generate(cfg, 555 ^ i)
        hits += select_rank(series, 8) == 3
    assert hits >= 0.95 * n


@pytest.mark.slow
def test_residual_second_moment_matches_noise(rng):
    from tensordi.dgp import DgpConfig, generate

    cfg = DgpConfig(dims=(20, 20), T=400, r=3, alpha=0.6)
    series, _ = generate(cfg, 99)
    fit = cc_iso(series, 3)
    resid = residual_vec_matrix(series, fit)
    # tr(Sigma_e)/d = 1 for unit-diagonal Toeplitz factors
    assert np.mean(resid**2) == pytest.approx(1.0, rel=0.05)
