import numpy as np
import pytest

from tensordi import DataError
from tensordi.dgp import (
    DgpConfig,
    ErrorSpec,
    FactorSpec,
    HdSpec,
    RegressionSpec,
    generate,
    toeplitz_matrix,
)


def test_config_validation():
    with pytest.raises(DataError):
        DgpConfig(dims=(8, 8), T=100, r=3, rho=(0.5, 0.5))  # rho length
    with pytest.raises(DataError):
        DgpConfig(dims=(8, 8), T=100, r=3, rho=(1.5, 0.5, 0.4))
    with pytest.raises(DataError):
        ErrorSpec(tau=1.0)
    with pytest.raises(DataError):
        ErrorSpec(kind="student_t", df=2.0)
    with pytest.raises(DataError):
        HdSpec(p=10, p0=12)
    cfg = DgpConfig(dims=(8, 8), T=100)
    assert cfg.signal_values()[0] == pytest.approx(3 * np.sqrt(64 ** 0.6))


def test_generate_reproducible():
    cfg = DgpConfig(dims=(6, 5), T=80)
    s1, t1 = generate(cfg, 42)
    s2, t2 = generate(cfg, 42)
    assert np.array_equal(s1.stack, s2.stack)
    assert np.array_equal(t1.y, t2.y)
    s3, _ = generate(cfg, 43)
    assert not np.array_equal(s1.stack, s3.stack)


def test_loading_normalization():
    cfg = DgpConfig(dims=(9, 7), T=50)
    _, truth = generate(cfg, 1)
    sig1 = toeplitz_matrix(0.5, 9)
    for k, dk in enumerate((9, 7)):
        norms = np.linalg.norm(truth.loadings[k], axis=0)
        assert np.allclose(norms, 1.0, atol=1e-12)
    # the pre-normalization vector has unit Sigma-quadratic form by
    # construction: a = S^(1/2) q / sqrt(q' S q) => a'a = 1 (checked above)
    # and the S-weighted form of the raw q is what the norm divides out
    a = truth.loadings[0][:, 0]
    assert a @ a == pytest.approx(1.0, abs=1e-12)
    assert np.isfinite(a @ sig1 @ a)


def test_factor_unit_variance_and_autocorrelation():
    cfg = DgpConfig(dims=(5, 5), T=4000, rho=(0.0, 0.0, 0.0))
    _, truth = generate(cfg, 3)
    f = truth.factors
    assert np.allclose(f.var(axis=0), 1.0, atol=0.15)
    for i in range(3):
        ac = np.corrcoef(f[1:, i], f[:-1, i])[0, 1]
        assert abs(ac) <= 3.0 / np.sqrt(cfg.T)


def test_persistent_factor_autocorrelation():
    cfg = DgpConfig(dims=(5, 5), T=4000, rho=(0.8, 0.8, 0.8))
    _, truth = generate(cfg, 4)
    for i in range(3):
        ac = np.corrcoef(truth.factors[1:, i], truth.factors[:-1, i])[0, 1]
        assert ac == pytest.approx(0.8, abs=0.05)


def test_error_kronecker_covariance():
    dk, T = 6, 2000
    cfg = DgpConfig(dims=(dk, dk), T=T)
    series, truth = generate(cfg, 7, keep_errors=True)
    evec = truth.errors.transpose(0, 2, 1).reshape(T, dk * dk)
    emp = evec.T @ evec / T
    want = np.kron(toeplitz_matrix(0.5, dk), toeplitz_matrix(0.5, dk))
    assert np.max(np.abs(emp - want)) <= 5.0 / np.sqrt(T)


def test_correlated_factors():
    cfg = DgpConfig(
        dims=(5, 5), T=6000, rho=(0.7, 0.7, 0.7),
        factor=FactorSpec("correlated_ar", 0.5),
    )
    _, truth = generate(cfg, 8)
    corr = np.corrcoef(truth.factors.T)
    # Cov(f) = Toeplitz(0.5, r) with unit diagonal
    assert corr[0, 1] == pytest.approx(0.5, abs=0.1)


def test_student_t_errors_raw_scale():
    cfg = DgpConfig(
        dims=(6, 6), T=3000, error=ErrorSpec("student_t", 0.5, 5.0),
    )
    series, truth = generate(cfg, 9, keep_errors=True)
    # raw t(5) innovations inflate the variance by df/(df-2)
    var = truth.errors.var()
    assert var == pytest.approx(5.0 / 3.0, rel=0.15)


def test_y_alignment_and_cond_mean():
    cfg = DgpConfig(dims=(6, 6), T=120, h=1)
    _, truth = generate(cfg, 10)
    reg = cfg.regression
    beta1 = np.asarray(reg.beta1)
    # y_t = 0.5 + beta1' f_{t-1} + eps_t for every in-sample t >= 2
    for t in (1, 50, 119):
        want = reg.beta0 + float(beta1 @ truth.factors[t - 1]) + truth.eps[t]
        assert truth.y[t] == pytest.approx(want, abs=1e-12)
    want_mean = reg.beta0 + float(beta1 @ truth.factors[-1])
    assert truth.cond_mean == pytest.approx(want_mean, abs=1e-12)


def test_hd_block_shapes_and_truth():
    cfg = DgpConfig(
        dims=(6, 6), T=90, hd=HdSpec(p=17, p0=3, beta0_value=0.5),
    )
    _, truth = generate(cfg, 11)
    assert truth.w.shape == (90, 17)
    assert truth.v.shape == (90, 17)
    assert truth.lam.shape == (17, 4)
    beta0 = np.zeros(17)
    beta0[:3] = 0.5
    z_T = np.concatenate([[1.0], truth.factors[-1]])
    beta1_z = np.concatenate([[cfg.regression.beta0], cfg.regression.beta1])
    want = float(truth.w[-1] @ beta0 + z_T @ beta1_z)
    assert truth.cond_mean == pytest.approx(want, abs=1e-12)


def test_signal_rule_per_factor_alpha():
    cfg = DgpConfig(dims=(8, 8), T=50, alpha=(1.0, 0.6, 0.4))
    s = cfg.signal_values()
    d = 64
    assert s[0] == pytest.approx(3 * np.sqrt(d))
    assert s[1] == pytest.approx(2 * np.sqrt(d ** 0.6))
    assert s[2] == pytest.approx(1 * np.sqrt(d ** 0.4))
