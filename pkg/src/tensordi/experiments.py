"""Monte-Carlo experiment drivers and reporting.

Every driver is deterministic given its master seed: replication i draws
from seed = master XOR i, so reports are byte-identical across reruns
(wall time goes to a separate meta.json sidecar). Replication failures are
recorded as rows and tolerated up to 10% of the budget.
"""

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import pca_fit, pca_prediction_interval
from .covariance import gamma2_from_residuals, hac_gamma
from .cpfactor import b_matrix, cc_iso, residual_vec_matrix
from .dgp import DgpConfig, ErrorSpec, FactorSpec, HdSpec, generate, toeplitz_matrix
from .errors import NumericalError
from .regression import fit_ols, prediction_interval
from .sparse import ms_fasr, _pd_interval_core

__all__ = [
    "ExperimentReport",
    "exp_factor_consistency",
    "exp_factor_normality",
    "exp_coverage",
    "exp_msfasr_rates",
    "exp_hac_demo",
    "exp_iso_vs_pca",
    "exp_pdlasso",
    "exp_robustness",
    "EXPERIMENTS",
    "t_rule_d34",
]


def t_rule_d34(d):
    """Sample-size rule T = 800 + ceil(d^(3/4))."""
    return 800 + int(math.ceil(d ** 0.75))


def _thr_level(d, T):
    """Dense-loading threshold level sqrt(log d / T) + sqrt(1/d)."""
    return math.sqrt(math.log(d) / T) + math.sqrt(1.0 / d)


@dataclass
class ExperimentReport:
    name: str
    config: dict
    replications: int
    metrics: list
    summary: dict
    wall_time_s: float
    plots: dict = field(default_factory=dict)

    @property
    def failures(self):
        return sum(1 for row in self.metrics if "error" in row)

    def write(self, outdir):
        os.makedirs(outdir, exist_ok=True)
        keys = sorted({k for row in self.metrics for k in row})
        with open(os.path.join(outdir, "metrics.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(keys)
            for row in self.metrics:
                writer.writerow([_fmt(row.get(k, "")) for k in keys])
        payload = {
            "schema_version": 1,
            "name": self.name,
            "config": self.config,
            "replications": self.replications,
            "failures": self.failures,
            "summary": self.summary,
        }
        with open(os.path.join(outdir, "summary.json"), "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
        with open(os.path.join(outdir, "meta.json"), "w") as fh:
            json.dump({"wall_time_s": self.wall_time_s}, fh)
        for plot_name, (header, rows) in self.plots.items():
            with open(os.path.join(outdir, f"{plot_name}.csv"), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                for row in rows:
                    writer.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def _call_cell(args, rep_fn, cells):
    cell_idx, rep_idx, seed = args
    tags, cfg_args = cells[cell_idx]
    try:
        out = rep_fn(seed, *cfg_args)
        row = {"rep": rep_idx, **tags, **out}
    except Exception as exc:  # recorded, run continues
        row = {"rep": rep_idx, **tags, "error": f"{type(exc).__name__}: {exc}"}
    return row


def _run_cells(name, cells, rep_fn, reps, master_seed, n_jobs, config):
    """Run `reps` replications of rep_fn for every (tags, cfg_args) cell."""
    if reps < 1:
        raise NumericalError("replication count must be >= 1")
    if not cells:
        raise NumericalError("experiment grid is empty")
    start = time.time()
    tasks = [
        (ci, i, master_seed ^ i)
        for ci in range(len(cells))
        for i in range(reps)
    ]
    rows = []
    if n_jobs and n_jobs > 1:
        from functools import partial

        worker = partial(_call_cell, rep_fn=rep_fn, cells=cells)
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(worker, tasks, chunksize=max(1, len(tasks) // (8 * n_jobs))))
    else:
        for args in tasks:
            rows.append(_call_cell(args, rep_fn, cells))
    failures = sum(1 for row in rows if "error" in row)
    if failures > 0.1 * len(tasks):
        raise NumericalError(
            f"{failures}/{len(tasks)} replications failed in experiment {name}"
        )
    wall = time.time() - start
    return rows, wall


def _group_mean(rows, group_keys, value_key):
    groups = {}
    for row in rows:
        if "error" in row or value_key not in row:
            continue
        key = tuple(row[k] for k in group_keys)
        groups.setdefault(key, []).append(row[value_key])
    return {key: float(np.mean(vals)) for key, vals in sorted(groups.items())}


def _sign_align(fhat, f):
    """Per-column sign that aligns estimated factors with the truth."""
    dots = np.einsum("ti,ti->i", fhat, f)
    signs = np.where(dots >= 0, 1.0, -1.0)
    return signs


def _factor_error_at_T(cp, truth):
    signs = _sign_align(cp.factors, truth.factors)
    h_diag = truth.signals / cp.signals
    diff = signs * cp.factors[-1] - h_diag * truth.factors[-1]
    return float(np.linalg.norm(diff)), signs


# --------------------------------------------------------------------------
# replication bodies (top level for picklability)

def _low_dim_cfg(d_k, alpha, T, rho=(0.6, 0.5, 0.4), error=None, factor=None, h=1):
    return DgpConfig(
        dims=(d_k, d_k),
        T=T,
        r=3,
        alpha=alpha,
        rho=rho,
        error=error or ErrorSpec(),
        factor=factor or FactorSpec(),
        h=h,
    )


def _rep_consistency(seed, cfg):
    series, truth = generate(cfg, seed)
    cp = cc_iso(series, cfg.r)
    err, _ = _factor_error_at_T(cp, truth)
    return {"err": err, "log_err": math.log(err)}


def _inv_sqrt(mat):
    w, v = np.linalg.eigh(mat)
    if w[0] <= 0:
        raise NumericalError("factor variance estimate is singular")
    return (v / np.sqrt(w)) @ v.T


def _rep_normality(seed, cfg):
    series, truth = generate(cfg, seed)
    cp = cc_iso(series, cfg.r)
    resid = residual_vec_matrix(series, cp)
    gamma = gamma2_from_residuals(
        b_matrix(cp), resid, "scad", _thr_level(cfg.d, cfg.T)
    )
    signs = _sign_align(cp.factors, truth.factors)
    gamma_aligned = gamma * np.outer(signs, signs)
    h_diag = truth.signals / cp.signals
    centered = cp.signals * (signs * cp.factors[-1] - h_diag * truth.factors[-1])
    stat = _inv_sqrt(gamma_aligned) @ centered
    return {f"stat_{i + 1}": float(s) for i, s in enumerate(stat)}


def _rep_coverage(seed, cfg, arms, level):
    series, truth = generate(cfg, seed)
    T, d = cfg.T, cfg.d
    lam_thr = _thr_level(d, T)
    w = np.ones((T, 1))
    out = {}
    if "cp" in arms:
        cp = cc_iso(series, cfg.r)
        dfit = fit_ols(truth.y, w, cp, cfg.h)
        resid = residual_vec_matrix(series, cp)
        gamma = gamma2_from_residuals(b_matrix(cp), resid, "scad", lam_thr)
        del resid
        pi = prediction_interval(dfit, cp, gamma, [1.0], level)
        out["cp_cover"] = float(pi.lower <= truth.cond_mean <= pi.upper)
        out["cp_width"] = pi.upper - pi.lower
        del cp
    if "pca_t" in arms or "pca_h" in arms:
        pfit = pca_fit(series, cfg.r)
        presid = series.vec_matrix() - pfit.factors @ pfit.loadings.T
        if "pca_t" in arms:
            pi = pca_prediction_interval(
                pfit, truth.y, w, "threshold", level, h=cfg.h,
                lam=lam_thr, residuals=presid,
            )
            out["pca_t_cover"] = float(pi.lower <= truth.cond_mean <= pi.upper)
            out["pca_t_width"] = pi.upper - pi.lower
        if "pca_h" in arms:
            pi = pca_prediction_interval(
                pfit, truth.y, w, "hac", level, h=cfg.h, residuals=presid,
            )
            out["pca_h_cover"] = float(pi.lower <= truth.cond_mean <= pi.upper)
            out["pca_h_width"] = pi.upper - pi.lower
    return out


def _rep_msfasr(seed, cfg):
    series, truth = generate(cfg, seed)
    fit = ms_fasr(
        truth.y, truth.w, series, cfg.r, cfg.h, lam="rate", add_intercept=True
    )
    beta_true = np.zeros(cfg.hd.p)
    beta_true[: cfg.hd.p0] = cfg.hd.beta0_value
    coefs = fit.beta0.coefficients[1:]  # drop the intercept coordinate
    return {
        "l1_err": float(np.sum(np.abs(coefs - beta_true))),
        "pred_err": abs(fit.forecast - truth.cond_mean),
        "lambda": fit.beta0.lam,
        "support_size": int(fit.beta0.support.size),
    }


def _rep_pdlasso(seed, cfg, level):
    series, truth = generate(cfg, seed)
    cp = cc_iso(series, cfg.r)
    fit = ms_fasr(
        truth.y, truth.w, series, cfg.r, cfg.h, lam="bic",
        add_intercept=True, cp=cp,
    )
    resid = residual_vec_matrix(series, cp)
    gamma = gamma2_from_residuals(
        b_matrix(cp), resid, "scad", _thr_level(cfg.d, cfg.T)
    )
    del resid
    pi = _pd_interval_core(fit, cp, gamma, truth.w[-1], level)
    sel = set(fit.beta0.support.tolist()) - {0}
    true_sel = set(range(1, cfg.hd.p0 + 1))  # +1: intercept column shift
    return {
        "cover": float(pi.lower <= truth.cond_mean <= pi.upper),
        "length": pi.upper - pi.lower,
        "exact_selection": float(sel == true_sel),
        "support_size": int(fit.beta0.support.size),
    }


def _rep_iso_pca(seed, cfg):
    series, truth = generate(cfg, seed)
    sqrt_T = math.sqrt(cfg.T)
    cp = cc_iso(series, cfg.r)
    signs = _sign_align(cp.factors, truth.factors)
    h_diag = truth.signals / cp.signals
    diff = signs * cp.factors - truth.factors * h_diag
    err_iso = float(np.linalg.norm(diff, ord=2)) / sqrt_T

    pfit = pca_fit(series, cfg.r)
    rot, *_ = np.linalg.lstsq(truth.factors, pfit.factors, rcond=None)
    err_pca = float(
        np.linalg.norm(pfit.factors - truth.factors @ rot, ord=2)
    ) / sqrt_T
    return {"err_iso": err_iso, "err_pca": err_pca}


def _rep_hac_demo(seed, cfg, n_value):
    series, truth = generate(cfg, seed)
    T, d, r = cfg.T, cfg.d, cfg.r
    pfit = pca_fit(series, r)
    x = series.vec_matrix()
    presid = x - pfit.factors @ pfit.loadings.T
    vinv = np.diag(1.0 / pfit.eigenvalues)
    q_mat = pfit.factors.T @ truth.factors / T

    gamma_feasible = vinv @ hac_gamma(pfit.loadings, presid, n_value, t_divisor=T) @ vinv

    sig_chain = truth.signals * np.column_stack(
        [np.kron(truth.loadings[1][:, i], truth.loadings[0][:, i]) for i in range(r)]
    )
    true_errors = x - truth.factors @ sig_chain.T
    gamma_oracle = (
        vinv @ q_mat @ hac_gamma(sig_chain, true_errors, n_value, t_divisor=T)
        @ q_mat.T @ vinv
    )

    tau = cfg.error.tau
    mode_quads = [
        truth.loadings[k].T @ toeplitz_matrix(tau, cfg.dims[k]) @ truth.loadings[k]
        for k in range(2)
    ]
    a_sig_a = np.outer(truth.signals, truth.signals) * mode_quads[0] * mode_quads[1]
    gamma_inf = vinv @ q_mat @ (a_sig_a / d) @ q_mat.T @ vinv

    signs = _sign_align(pfit.factors, truth.factors)
    diff = signs * pfit.factors[-1] - truth.factors[-1]
    out = {}
    for tag, mat in (
        ("hac", gamma_feasible),
        ("oracle", gamma_oracle),
        ("infeasible", gamma_inf),
    ):
        mat = (mat + mat.T) / 2.0
        stat = math.sqrt(d) * (_inv_sqrt(mat) @ diff)
        out[f"stat_{tag}"] = float(stat[0])
    return out


def _rep_robust_both(seed, cov_cfg, hd_cfg, level):
    out = _rep_coverage(seed, cov_cfg, ("cp", "pca_t", "pca_h"), level)
    out.update(_rep_msfasr(seed, hd_cfg))
    return out


# --------------------------------------------------------------------------
# drivers

def exp_factor_consistency(reps=200, seed=0, n_jobs=1, d_grid=(20, 40, 60, 80),
                           alphas=(0.6, 0.4), T=500):
    """Monte-Carlo factor-estimation errors across tensor sizes."""
    cells = [
        ({"alpha": a, "d_k": dk, "T": T}, (_low_dim_cfg(dk, a, T),))
        for a in alphas
        for dk in d_grid
    ]
    config = {"d_grid": list(d_grid), "alphas": list(alphas), "T": T,
              "reps": reps, "seed": seed}
    rows, wall = _run_cells(
        "factor_consistency", cells, _rep_consistency, reps, seed, n_jobs, config
    )
    means = _group_mean(rows, ("alpha", "d_k"), "err")
    summary = {
        "mean_err": {f"alpha={a},d_k={d}": v for (a, d), v in means.items()},
        "monotone_decreasing": {
            str(a): _is_decreasing([means[(a, d)] for d in d_grid if (a, d) in means])
            for a in alphas
        },
    }
    plot_rows = [
        [a, d, means[(a, d)], math.log(means[(a, d)])]
        for (a, d) in means
    ]
    return ExperimentReport(
        name="factor_consistency", config=config, replications=reps,
        metrics=rows, summary=summary, wall_time_s=wall,
        plots={"fig_consistency": (["alpha", "d_k", "mean_err", "log_mean_err"], plot_rows)},
    )


def _is_decreasing(values):
    return bool(all(b < a for a, b in zip(values, values[1:])))


def exp_factor_normality(reps=1000, seed=0, n_jobs=1, d_grid=(40, 60, 80),
                         alphas=(0.6,)):
    """Standardized factor-error statistic against the standard normal."""
    cells = []
    for a in alphas:
        for dk in d_grid:
            T = t_rule_d34(dk * dk)
            cells.append(({"alpha": a, "d_k": dk, "T": T}, (_low_dim_cfg(dk, a, T),)))
    config = {"d_grid": list(d_grid), "alphas": list(alphas), "reps": reps, "seed": seed}
    rows, wall = _run_cells(
        "factor_normality", cells, _rep_normality, reps, seed, n_jobs, config
    )
    summary = {}
    plot_rows = []
    for a in alphas:
        for dk in d_grid:
            pooled = [
                row[key]
                for row in rows
                if "error" not in row and row["alpha"] == a and row["d_k"] == dk
                for key in row
                if key.startswith("stat_")
            ]
            if not pooled:
                continue
            pooled = np.asarray(pooled)
            summary[f"alpha={a},d_k={dk}"] = {
                "mean": float(np.mean(pooled)),
                "std": float(np.std(pooled, ddof=1)),
                "count": int(pooled.size),
            }
            plot_rows.append([a, dk, float(np.mean(pooled)), float(np.std(pooled, ddof=1))])
    return ExperimentReport(
        name="factor_normality", config=config, replications=reps,
        metrics=rows, summary=summary, wall_time_s=wall,
        plots={"fig_normality": (["alpha", "d_k", "mean", "std"], plot_rows)},
    )


def exp_coverage(reps=500, seed=0, n_jobs=1, d_grid=(20, 40, 60, 80, 120, 160),
                 alphas=(0.6, 0.4), arms=("cp", "pca_t", "pca_h"), level=0.95):
    """Empirical coverage of the CP and PCA prediction intervals."""
    cells = []
    for a in alphas:
        for dk in d_grid:
            T = t_rule_d34(dk * dk)
            cells.append(
                ({"alpha": a, "d_k": dk, "T": T},
                 (_low_dim_cfg(dk, a, T), tuple(arms), level))
            )
    config = {"d_grid": list(d_grid), "alphas": list(alphas), "arms": list(arms),
              "level": level, "reps": reps, "seed": seed}
    rows, wall = _run_cells("coverage", cells, _rep_coverage, reps, seed, n_jobs, config)
    summary = {}
    plot_rows = []
    for a in alphas:
        for dk in d_grid:
            entry = {}
            for arm in arms:
                vals = [
                    row[f"{arm}_cover"] for row in rows
                    if "error" not in row and row["alpha"] == a and row["d_k"] == dk
                ]
                if vals:
                    entry[arm] = float(np.mean(vals))
            summary[f"alpha={a},d_k={dk}"] = entry
            plot_rows.append([a, dk] + [entry.get(arm, "") for arm in arms])
    return ExperimentReport(
        name="coverage", config=config, replications=reps, metrics=rows,
        summary=summary, wall_time_s=wall,
        plots={"table_coverage": (["alpha", "d_k"] + list(arms), plot_rows)},
    )


def _msfasr_t_grid(p0, p, targets):
    return [int(math.ceil((p0 / x) ** 2 * math.log(p))) for x in targets]


def exp_msfasr_rates(reps=200, seed=0, n_jobs=1, alphas=(0.6,), d_k=40,
                     p=200, p0=3, n_grid=8, target_lo=0.15, target_hi=0.5):
    """Estimation/prediction error of the sparse pipeline across T."""
    targets = np.linspace(target_hi, target_lo, n_grid)  # increasing T
    cells = []
    for a in alphas:
        for x, T in zip(targets, _msfasr_t_grid(p0, p, targets)):
            cfg = DgpConfig(
                dims=(d_k, d_k), T=T, r=3, alpha=a,
                hd=HdSpec(p=p, p0=p0, beta0_value=0.5),
            )
            cells.append(({"alpha": a, "T": T, "rate_x": float(x)}, (cfg,)))
    config = {"alphas": list(alphas), "d_k": d_k, "p": p, "p0": p0,
              "targets": [float(x) for x in targets], "reps": reps, "seed": seed}
    rows, wall = _run_cells("msfasr_rates", cells, _rep_msfasr, reps, seed, n_jobs, config)
    summary = {}
    plot_rows = []
    for a in alphas:
        xs, means_l1, means_pred = [], [], []
        for x, T in zip(targets, _msfasr_t_grid(p0, p, targets)):
            vals = [
                row["l1_err"] for row in rows
                if "error" not in row and row["alpha"] == a and row["T"] == T
            ]
            preds = [
                row["pred_err"] for row in rows
                if "error" not in row and row["alpha"] == a and row["T"] == T
            ]
            if vals:
                xs.append(float(x))
                means_l1.append(float(np.mean(vals)))
                means_pred.append(float(np.mean(preds)))
                plot_rows.append([a, T, float(x), means_l1[-1], means_pred[-1]])
        r2 = _linear_r2(xs, means_l1)
        summary[f"alpha={a}"] = {
            "rate_x": xs, "mean_l1": means_l1, "mean_pred": means_pred,
            "l1_vs_rate_r2": r2,
        }
    return ExperimentReport(
        name="msfasr_rates", config=config, replications=reps, metrics=rows,
        summary=summary, wall_time_s=wall,
        plots={"fig_msfasr": (["alpha", "T", "rate_x", "mean_l1", "mean_pred"], plot_rows)},
    )


def _linear_r2(xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size < 3:
        return float("nan")
    design = np.column_stack([np.ones_like(xs), xs])
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    fitted = design @ coef
    ss_res = float(np.sum((ys - fitted) ** 2))
    ss_tot = float(np.sum((ys - np.mean(ys)) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")


def exp_hac_demo(reps=500, seed=0, n_jobs=1, d_grid=(20, 40, 60, 80, 100),
                 setting="sqrt"):
    """Cross-sectional HAC variance estimates under Kronecker-Toeplitz errors.

    setting="sqrt": n = sqrt(min(d, T)), T = 1000;
    setting="d34":  n = ceil(d^(3/4)),   T = 500 + ceil(d^(4/5)).
    """
    cells = []
    for dk in d_grid:
        d = dk * dk
        if setting == "sqrt":
            T = 1000
            n_value = max(1, int(math.sqrt(min(d, T))))
        elif setting == "d34":
            T = 500 + int(math.ceil(d ** 0.8))
            n_value = min(d, int(math.ceil(d ** 0.75)))
        else:
            raise NumericalError(f"unknown hac setting {setting!r}")
        cfg = DgpConfig(
            dims=(dk, dk), T=T, r=3, alpha=1.0,
            error=ErrorSpec(tau=0.6), loading_spec="scaled", loading_tau=0.6,
        )
        cells.append(({"d_k": dk, "T": T, "n": n_value}, (cfg, n_value)))
    config = {"d_grid": list(d_grid), "setting": setting, "reps": reps, "seed": seed}
    rows, wall = _run_cells("hac_demo", cells, _rep_hac_demo, reps, seed, n_jobs, config)
    summary = {}
    plot_rows = []
    for dk in d_grid:
        entry = {}
        for tag in ("hac", "oracle", "infeasible"):
            vals = [
                row[f"stat_{tag}"] for row in rows
                if "error" not in row and row["d_k"] == dk
            ]
            if vals:
                entry[tag] = {"std": float(np.std(vals, ddof=1)),
                              "mean": float(np.mean(vals))}
        summary[f"d_k={dk}"] = entry
        plot_rows.append([dk] + [entry.get(t, {}).get("std", "") for t in
                                 ("hac", "oracle", "infeasible")])
    return ExperimentReport(
        name="hac_demo", config=config, replications=reps, metrics=rows,
        summary=summary, wall_time_s=wall,
        plots={"fig_hac_std": (["d_k", "std_hac", "std_oracle", "std_infeasible"], plot_rows)},
    )


def exp_iso_vs_pca(reps=100, seed=0, n_jobs=1, d_grid=(20, 40, 60, 80, 100),
                   alphas=(0.6, 0.5, 0.4)):
    """Factor-estimation error of CC-ISO vs vectorized PCA in the
    small-T regime T = 100 + ceil(d^0.3)."""
    cells = []
    for a in alphas:
        for dk in d_grid:
            T = 100 + int(math.ceil((dk * dk) ** 0.3))
            cells.append(({"alpha": a, "d_k": dk, "T": T}, (_low_dim_cfg(dk, a, T),)))
    config = {"d_grid": list(d_grid), "alphas": list(alphas), "reps": reps, "seed": seed}
    rows, wall = _run_cells("iso_vs_pca", cells, _rep_iso_pca, reps, seed, n_jobs, config)
    summary = {}
    plot_rows = []
    for a in alphas:
        iso = [
            _group_mean(rows, ("alpha", "d_k"), "err_iso").get((a, dk))
            for dk in d_grid
        ]
        pca = [
            _group_mean(rows, ("alpha", "d_k"), "err_pca").get((a, dk))
            for dk in d_grid
        ]
        summary[f"alpha={a}"] = {
            "d_grid": list(d_grid),
            "iso_mean": iso,
            "pca_mean": pca,
            "iso_ratio_last_first": (iso[-1] / iso[0]) if iso[0] else None,
            "pca_ratio_last_first": (pca[-1] / pca[0]) if pca[0] else None,
        }
        for dk, ei, ep in zip(d_grid, iso, pca):
            plot_rows.append([a, dk, ei, ep])
    return ExperimentReport(
        name="iso_vs_pca", config=config, replications=reps, metrics=rows,
        summary=summary, wall_time_s=wall,
        plots={"fig_iso_vs_pca": (["alpha", "d_k", "err_iso", "err_pca"], plot_rows)},
    )


def exp_pdlasso(reps=500, seed=0, n_jobs=1, d_grid=(40, 80, 100),
                alphas=(1.0, 0.6, 0.4), p=100, p0=3, level=0.95):
    """Coverage and length of post-selection debiased intervals."""
    cells = []
    for a in alphas:
        for dk in d_grid:
            T = t_rule_d34(dk * dk)
            cfg = DgpConfig(
                dims=(dk, dk), T=T, r=3, alpha=a,
                hd=HdSpec(p=p, p0=p0, beta0_value=3.0, v_kind="toeplitz", v_tau=0.5),
            )
            cells.append(({"alpha": a, "d_k": dk, "T": T}, (cfg, level)))
    config = {"d_grid": list(d_grid), "alphas": list(alphas), "p": p, "p0": p0,
              "level": level, "reps": reps, "seed": seed}
    rows, wall = _run_cells("pdlasso", cells, _rep_pdlasso, reps, seed, n_jobs, config)
    summary = {}
    plot_rows = []
    for a in alphas:
        for dk in d_grid:
            sel = [
                row for row in rows
                if "error" not in row and row["alpha"] == a and row["d_k"] == dk
            ]
            if not sel:
                continue
            cov = float(np.mean([row["cover"] for row in sel]))
            length = float(np.mean([row["length"] for row in sel]))
            exact = float(np.mean([row["exact_selection"] for row in sel]))
            summary[f"alpha={a},d_k={dk}"] = {
                "coverage": cov, "mean_length": length, "exact_selection": exact,
            }
            plot_rows.append([a, dk, length, cov])
    return ExperimentReport(
        name="pdlasso", config=config, replications=reps, metrics=rows,
        summary=summary, wall_time_s=wall,
        plots={"table_pdlasso": (["alpha", "d_k", "mean_length", "coverage"], plot_rows)},
    )


def exp_robustness(reps=200, seed=0, n_jobs=1, variant="persistent", level=0.95,
                   d_k=40, alpha=0.6):
    """Alternative DGPs: persistent/correlated factors, stronger error
    dependence, Student-t innovations, the rate-verification curve, and the
    no-common-structure (Lambda = 0) check."""
    T_cov = t_rule_d34(d_k * d_k)
    hd_spec = HdSpec(p=200, p0=3, beta0_value=0.5)

    if variant == "persistent":
        cells = []
        for rho in (0.7, 0.8, 0.9):
            cov_cfg = DgpConfig(
                dims=(d_k, d_k), T=T_cov, r=3, alpha=alpha,
                rho=(rho, rho, rho), factor=FactorSpec("correlated_ar", 0.5),
            )
            hd_cfg = DgpConfig(
                dims=(d_k, d_k), T=500, r=3, alpha=alpha,
                rho=(rho, rho, rho), factor=FactorSpec("correlated_ar", 0.5),
                hd=hd_spec,
            )
            cells.append(({"rho": rho}, (cov_cfg, hd_cfg, level)))
        rep_fn = _rep_robust_both
        tag_key = "rho"
    elif variant == "error_dependence":
        cells = []
        for kappa in (0.6, 0.7, 0.8):
            cov_cfg = DgpConfig(
                dims=(d_k, d_k), T=T_cov, r=3, alpha=alpha,
                error=ErrorSpec(tau=kappa),
            )
            hd_cfg = DgpConfig(
                dims=(d_k, d_k), T=500, r=3, alpha=alpha,
                error=ErrorSpec(tau=kappa), hd=hd_spec,
            )
            cells.append(({"kappa": kappa}, (cov_cfg, hd_cfg, level)))
        rep_fn = _rep_robust_both
        tag_key = "kappa"
    elif variant == "student_t":
        cells = []
        for df in (4, 5, 6):
            cov_cfg = DgpConfig(
                dims=(d_k, d_k), T=T_cov, r=3, alpha=alpha,
                error=ErrorSpec("student_t", 0.5, df),
            )
            hd_cfg = DgpConfig(
                dims=(d_k, d_k), T=500, r=3, alpha=alpha,
                error=ErrorSpec("student_t", 0.5, df), hd=hd_spec,
            )
            cells.append(({"df": df}, (cov_cfg, hd_cfg, level)))
        rep_fn = _rep_robust_both
        tag_key = "df"
    elif variant == "rate_curve":
        cells = []
        for dk in (20, 30, 40, 50, 60, 70, 80):
            cfg = DgpConfig(
                dims=(dk, dk), T=500, r=3, alpha=alpha, rho=(0.0, 0.0, 0.0),
            )
            cells.append(({"d_k": dk}, (cfg,)))
        rep_fn = _rep_consistency
        tag_key = "d_k"
    elif variant == "lambda_zero":
        cells = []
        for T in (100, 300, 500, 700, 1000):
            cfg = DgpConfig(
                dims=(d_k, d_k), T=T, r=3, alpha=alpha,
                hd=HdSpec(p=200, p0=3, beta0_value=0.5, lambda_law="zero"),
            )
            cells.append(({"T": T}, (cfg,)))
        rep_fn = _rep_msfasr
        tag_key = "T"
    else:
        raise NumericalError(f"unknown robustness variant {variant!r}")

    config = {"variant": variant, "d_k": d_k, "alpha": alpha,
              "reps": reps, "seed": seed}
    rows, wall = _run_cells(
        f"robustness_{variant}", cells, rep_fn, reps, seed, n_jobs, config
    )

    summary = {}
    if variant in ("persistent", "error_dependence", "student_t"):
        for tags, _ in cells:
            key = tags[tag_key]
            sel = [row for row in rows if "error" not in row and row.get(tag_key) == key]
            if not sel:
                continue
            summary[f"{tag_key}={key}"] = {
                "cp_coverage": float(np.mean([r["cp_cover"] for r in sel])),
                "pca_t_coverage": float(np.mean([r["pca_t_cover"] for r in sel])),
                "pca_h_coverage": float(np.mean([r["pca_h_cover"] for r in sel])),
                "msfasr_pred_err": float(np.mean([r["pred_err"] for r in sel])),
            }
    elif variant == "rate_curve":
        d_list = [tags["d_k"] for tags, _ in cells]
        means = _group_mean(rows, ("d_k",), "err")
        ys = np.array([means[(dk,)] for dk in d_list])
        feats = np.column_stack(
            [
                [math.sqrt(1.0 / ((dk * dk) ** 0.1 * 500)) for dk in d_list],
                [(dk * dk) ** -0.3 for dk in d_list],
            ]
        )
        coef, *_ = np.linalg.lstsq(feats, ys, rcond=None)
        fitted = feats @ coef
        ss_res = float(np.sum((ys - fitted) ** 2))
        ss_tot = float(np.sum((ys - ys.mean()) ** 2))
        summary = {
            "d_grid": d_list,
            "mean_err": ys.tolist(),
            "c0": float(coef[0]),
            "c1": float(coef[1]),
            "curve_r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan"),
        }
    else:  # lambda_zero
        for tags, _ in cells:
            T = tags["T"]
            sel = [row for row in rows if "error" not in row and row.get("T") == T]
            if sel:
                summary[f"T={T}"] = {
                    "mean_l1": float(np.mean([r["l1_err"] for r in sel])),
                    "mean_pred": float(np.mean([r["pred_err"] for r in sel])),
                }

    return ExperimentReport(
        name=f"robustness_{variant}", config=config, replications=reps,
        metrics=rows, summary=summary, wall_time_s=wall,
    )


EXPERIMENTS = {
    "factor_consistency": exp_factor_consistency,
    "factor_normality": exp_factor_normality,
    "coverage": exp_coverage,
    "msfasr_rates": exp_msfasr_rates,
    "hac_demo": exp_hac_demo,
    "iso_vs_pca": exp_iso_vs_pca,
    "pdlasso": exp_pdlasso,
    "robustness": exp_robustness,
}
