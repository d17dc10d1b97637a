import itertools
import math

import numpy as np
import pytest

from tensordi import (
    DataError,
    LassoConfig,
    NumericalError,
    TensorSeries,
    lasso,
    ms_fasr,
    nodewise_precision,
    pd_lasso_interval,
    threshold_covariance,
    tune_lambda_ev,
)
from tensordi.sparse import _pd_interval_core, lasso_kkt_violation
from tensordi.cpfactor import cc_iso, residual_vec_matrix
from tensordi.dgp import DgpConfig, HdSpec, RegressionSpec, generate

from test_cpfactor import make_rank_r_series


def exhaustive_lasso_oracle(y, x, lam):
    """Global optimum by enumerating supports and sign patterns, certifying
    each candidate through the full KKT conditions."""
    T, p = x.shape
    gram = x.T @ x / T
    corr = x.T @ y / T
    best = (float(np.inf), None)
    base = float(y @ y) / (2 * T)
    # beta = 0 candidate
    if np.all(np.abs(corr) <= lam + 1e-12):
        best = (base, np.zeros(p))
    for size in range(1, p + 1):
        for support in itertools.combinations(range(p), size):
            s = list(support)
            for signs in itertools.product((-1.0, 1.0), repeat=size):
                sv = np.asarray(signs)
                try:
                    beta_s = np.linalg.solve(
                        gram[np.ix_(s, s)], corr[s] - lam * sv
                    )
                except np.linalg.LinAlgError:
                    continue
                if np.any(np.sign(beta_s) != sv):
                    continue
                beta = np.zeros(p)
                beta[s] = beta_s
                grad = corr - gram @ beta
                off = [j for j in range(p) if j not in support]
                if off and np.any(np.abs(grad[off]) > lam + 1e-10):
                    continue
                obj = float(
                    np.sum((y - x @ beta) ** 2) / (2 * T)
                    + lam * np.sum(np.abs(beta))
                )
                if obj < best[0]:
                    best = (obj, beta)
    return best


def test_lasso_zero_penalty_is_ols(rng):
    x = rng.standard_normal((50, 5))
    y = rng.standard_normal(50)
    fit = lasso(y, x, 0.0)
    ols = np.linalg.lstsq(x, y, rcond=None)[0]
    assert np.allclose(fit.coefficients, ols, atol=1e-8)
    assert fit.converged


def test_lasso_orthonormal_design_soft_threshold(rng):
    T, p = 64, 6
    q, _ = np.linalg.qr(rng.standard_normal((T, p)))
    x = q * math.sqrt(T)  # X'X/T = I
    y = rng.standard_normal(T)
    lam = 0.15
    fit = lasso(y, x, lam)
    corr = x.T @ y / T
    want = np.sign(corr) * np.maximum(np.abs(corr) - lam, 0.0)
    assert np.allclose(fit.coefficients, want, atol=1e-10)


def test_lasso_matches_exhaustive_oracle(rng):
    T, p = 40, 6
    x = rng.standard_normal((T, p))
    beta = np.zeros(p)
    beta[:2] = (1.5, -1.0)
    y = x @ beta + 0.3 * rng.standard_normal(T)
    lam = 0.2
    fit = lasso(y, x, lam)
    obj_oracle, beta_oracle = exhaustive_lasso_oracle(y, x, lam)
    assert fit.objective <= obj_oracle + 1e-8
    assert abs(fit.objective - obj_oracle) <= 1e-8
    assert np.allclose(fit.coefficients, beta_oracle, atol=1e-6)


def test_lasso_kkt_certification(rng):
    for _ in range(50):
        T = int(rng.integers(20, 60))
        p = int(rng.integers(2, 12))
        x = rng.standard_normal((T, p))
        y = rng.standard_normal(T)
        lam = float(rng.uniform(0.01, 0.5))
        fit = lasso(y, x, lam)
        assert lasso_kkt_violation(y, x, fit) <= 1e-7


def test_lasso_objective_field_recomputable(rng):
    x = rng.standard_normal((30, 4))
    y = rng.standard_normal(30)
    fit = lasso(y, x, 0.1)
    resid = y - x @ fit.coefficients
    obj = float(resid @ resid) / 60 + 0.1 * float(np.sum(np.abs(fit.coefficients)))
    assert fit.objective == pytest.approx(obj, abs=1e-10)


def test_lasso_objective_monotone_over_sweeps(rng):
    x = rng.standard_normal((40, 8))
    y = rng.standard_normal(40)
    lam = 0.05
    objs = []
    beta = np.zeros(8)
    for _ in range(30):
        fit = lasso(y, x, lam, LassoConfig(max_sweeps=1, tol=0.0), beta_init=beta)
        beta = fit.coefficients
        objs.append(fit.objective)
    diffs = np.diff(objs)
    assert np.all(diffs <= 1e-12)


def test_lasso_path_support_monotone_orthonormal(rng):
    T, p = 100, 8
    q, _ = np.linalg.qr(rng.standard_normal((T, p)))
    x = q * math.sqrt(T)
    y = rng.standard_normal(T)
    supports = []
    for lam in (0.01, 0.05, 0.1, 0.2, 0.4):
        supports.append(set(lasso(y, x, lam).support.tolist()))
    for small, big in zip(supports[1:], supports[:-1]):
        assert small <= big


def test_lasso_unpenalized_mask(rng):
    x = rng.standard_normal((60, 5))
    y = x[:, 0] * 2.0 + rng.standard_normal(60)
    weights = np.ones(5)
    weights[0] = 0.0
    fit = lasso(y, x, 5.0, penalty_weights=weights)
    # huge penalty kills all penalized coords; the free one stays active
    assert fit.coefficients[0] != 0.0
    assert np.all(fit.coefficients[1:] == 0.0)


def test_lasso_input_validation(rng):
    x = rng.standard_normal((10, 3))
    with pytest.raises(DataError):
        lasso(np.full(10, np.nan), x, 0.1)
    with pytest.raises(DataError):
        lasso(rng.standard_normal(10), x, -0.5)


def test_lasso_nonconvergence_flagged(rng):
    x = rng.standard_normal((50, 10))
    y = rng.standard_normal(50)
    fit = lasso(y, x, 1e-4, LassoConfig(max_sweeps=1, tol=1e-14))
    assert not fit.converged
    assert fit.iterations == 1


def make_hd_case(seed=5, T=160, p=25, dk=8, r=2):
    cfg = DgpConfig(
        dims=(dk, dk), T=T, r=r, alpha=0.8, rho=(0.5, 0.4),
        regression=RegressionSpec(beta1=(0.5, 0.5)),
        hd=HdSpec(p=p, p0=3, beta0_value=1.0),
    )
    series, truth = generate(cfg, seed)
    return cfg, series, truth


def test_ms_fasr_penalty_collapse_gives_factor_forecast():
    cfg, series, truth = make_hd_case()
    fit = ms_fasr(truth.y, truth.w, series, cfg.r, 1, lam=1e6)
    assert np.all(fit.beta0.coefficients == 0.0)
    # pure diffusion-index factor forecast
    cp = cc_iso(series, cfg.r)
    fn = cp.factors[: len(series) - 1]
    b1 = np.linalg.lstsq(fn, truth.y[1:], rcond=None)[0]
    want = float(b1 @ cp.factors[-1])
    assert fit.forecast == pytest.approx(want, abs=1e-8)


def test_ms_fasr_step5_identity_and_orthogonality():
    cfg, series, truth = make_hd_case(seed=6)
    fit = ms_fasr(truth.y, truth.w, series, cfg.r, 1, lam=0.1, add_intercept=True)
    recomputed = fit.beta1_star - fit.lambda_hat.T @ fit.beta0.coefficients
    assert np.array_equal(recomputed, fit.beta1)
    ortho = np.max(np.abs(fit._vhat.T @ fit._factors)) / len(series)
    assert ortho <= 1e-8
    payload = fit.to_dict()
    assert payload["support"] == fit.beta0.support.tolist()


def test_ms_fasr_recovers_sparse_signal():
    cfg, series, truth = make_hd_case(seed=7, T=300)
    fit = ms_fasr(truth.y, truth.w, series, cfg.r, 1, lam="rate", add_intercept=True)
    coefs = fit.beta0.coefficients[1:]
    true_beta = np.zeros(cfg.hd.p)
    true_beta[:3] = 1.0
    assert np.sum(np.abs(coefs - true_beta)) < 1.0
    assert set(range(1, 4)) <= set(fit.beta0.support.tolist())


def test_ms_fasr_lambda_zero_dgp_runs():
    cfg = DgpConfig(
        dims=(8, 8), T=150, r=2, alpha=0.8, rho=(0.5, 0.4),
        regression=RegressionSpec(beta1=(0.5, 0.5)),
        hd=HdSpec(p=20, p0=3, beta0_value=1.0, lambda_law="zero"),
    )
    series, truth = generate(cfg, 11)
    fit = ms_fasr(truth.y, truth.w, series, cfg.r, 1, lam="rate", add_intercept=True)
    assert np.isfinite(fit.forecast)
    assert np.max(np.abs(fit.lambda_hat[:, 1:])) < 0.5  # no real factor structure in w


def test_tune_single_candidate():
    cfg, series, truth = make_hd_case(seed=8)
    lam = tune_lambda_ev(truth.y, truth.w, series, cfg.r, 1, grid=[0.37])
    assert lam == 0.37


def test_tune_dominance_small_lambda_when_w_has_signal():
    cfg, series, truth = make_hd_case(seed=9, T=200)
    lam = tune_lambda_ev(
        truth.y, truth.w, series, cfg.r, 1, grid=[1e-4, 1e4],
        freeze_factors=True,
    )
    assert lam == pytest.approx(1e-4)


def test_tune_validation_window_guard():
    cfg, series, truth = make_hd_case(seed=10)
    with pytest.raises(DataError):
        tune_lambda_ev(truth.y, truth.w, series, cfg.r, 1, grid=[0.1],
                       gamma_split=0.999999)


def test_nodewise_orthonormal_columns(rng):
    T, p = 80, 6
    q, _ = np.linalg.qr(rng.standard_normal((T, p)))
    v = q * math.sqrt(T)
    theta, tau2 = nodewise_precision(v, [0, 3], 0.0)
    for row, j in zip(range(2), (0, 3)):
        want_tau2 = float(v[:, j] @ v[:, j]) / T
        assert tau2[row] == pytest.approx(want_tau2, rel=1e-6)
        expected = np.zeros(p)
        expected[j] = 1.0 / want_tau2
        assert np.allclose(theta[row], expected, atol=1e-6)


def test_nodewise_p2_closed_form(rng):
    T = 100
    z = rng.standard_normal((T, 2))
    z[:, 1] = 0.6 * z[:, 0] + 0.8 * z[:, 1]
    lam = 0.05
    theta, tau2 = nodewise_precision(z, [0], lam)
    gram11 = float(z[:, 1] @ z[:, 1]) / T
    corr01 = float(z[:, 1] @ z[:, 0]) / T
    gamma = np.sign(corr01) * max(abs(corr01) - lam, 0.0) / gram11
    resid = z[:, 0] - gamma * z[:, 1]
    want_tau2 = float(resid @ resid) / T + lam * abs(gamma)
    assert tau2[0] == pytest.approx(want_tau2, rel=1e-8)
    assert theta[0, 1] == pytest.approx(-gamma / want_tau2, rel=1e-6, abs=1e-10)


def test_nodewise_huge_lambda_diagonal(rng):
    v = rng.standard_normal((50, 4))
    theta, _ = nodewise_precision(v, [1, 2], 1e6)
    assert np.all(theta[:, [0, 3]] == 0.0)
    assert theta[0, 2] == 0.0 and theta[1, 1] == 0.0


def test_nodewise_validation(rng):
    v = rng.standard_normal((30, 4))
    with pytest.raises(Exception):
        nodewise_precision(v, [], 0.1)
    with pytest.raises(NumericalError):
        nodewise_precision(np.zeros((30, 4)), [0], 0.0)


def _pd_setup(seed=12, T=250, p=15):
    cfg = DgpConfig(
        dims=(8, 8), T=T, r=2, alpha=0.8, rho=(0.5, 0.4),
        regression=RegressionSpec(beta1=(0.5, 0.5)),
        hd=HdSpec(p=p, p0=3, beta0_value=1.0),
    )
    series, truth = generate(cfg, seed)
    cp = cc_iso(series, cfg.r)
    fit = ms_fasr(truth.y, truth.w, series, cfg.r, 1, lam="rate",
                  add_intercept=True, cp=cp)
    resid = residual_vec_matrix(series, cp)
    cov = threshold_covariance(resid, "scad", 0.2)
    return cfg, series, truth, cp, fit, cov


def test_pd_lasso_interval_basic_coverage_machinery():
    cfg, series, truth, cp, fit, cov = _pd_setup()
    pi = pd_lasso_interval(fit, cp, cov, truth.w[-1], 0.95)
    assert pi.lower < pi.point < pi.upper
    state = fit.pd_state
    assert state is not None
    assert np.all(state.tau2 > 0)
    # debiasing touches only selected coordinates
    off = np.setdiff1d(np.arange(fit.beta0.coefficients.size), state.selected)
    assert np.array_equal(
        state.beta0_debiased[off], fit.beta0.coefficients[off]
    )
    assert len(state.variance_terms) == 3


def test_pd_lasso_empty_selection_factor_only():
    cfg, series, truth, cp, fit, cov = _pd_setup(seed=13)
    big = ms_fasr(truth.y, truth.w, series, cfg.r, 1, lam=1e7,
                  add_intercept=False, cp=cp)
    assert big.beta0.support.size == 0
    pi = pd_lasso_interval(big, cp, cov, truth.w[-1], 0.95)
    assert big.pd_state.selected.size == 0
    assert big.pd_state.variance_terms[0] == 0.0
    assert pi.std > 0.0


def test_pd_lasso_zero_noise_tiny_interval(rng):
    # noiseless target: y is an exact function of w and the factors
    T, p, r = 200, 10, 2
    series, loadings, f = make_rank_r_series(rng, (8, 8), r, T, (30.0, 15.0))
    lam_mat = rng.uniform(-1, 1, size=(p, r))
    v = rng.standard_normal((T, p))
    w = f @ lam_mat.T + v
    beta0 = np.zeros(p)
    beta0[:2] = 1.0
    y = np.empty(T)
    y[1:] = w[:-1] @ beta0 + f[:-1] @ np.array([0.5, 0.5])
    y[0] = 0.0
    cp = cc_iso(series, r)
    fit = ms_fasr(y, w, series, r, 1, lam=0.05, cp=cp)
    resid = residual_vec_matrix(series, cp)
    cov = threshold_covariance(resid, "scad", 0.5)
    pi = _pd_interval_core(fit, cp, np.zeros((r, r)), w[-1], 0.95)
    truth_mean = float(w[-1] @ beta0 + f[-1] @ np.array([0.5, 0.5]))
    assert pi.upper - pi.lower <= 0.2
    assert pi.lower - 0.05 <= truth_mean <= pi.upper + 0.05


def test_pd_interval_level_guard():
    cfg, series, truth, cp, fit, cov = _pd_setup(seed=14)
    with pytest.raises(DataError):
        pd_lasso_interval(fit, cp, cov, truth.w[-1], 0.0)
