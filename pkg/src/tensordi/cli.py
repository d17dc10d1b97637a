"""Command-line surface: estimation, forecasting, and experiment drivers.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
A JSON config file can carry any command's parameters; explicit flags
override file values. Outputs are byte-identical across reruns for the
same inputs and seed (wall time is kept out of the deterministic files).
"""

import argparse
import json
import math
import sys

import numpy as np

from .covariance import (
    default_threshold_level,
    gamma1_diagonal,
    gamma2_thresholded,
    threshold_covariance,
)
from .cpfactor import cc_iso, residual_vec_matrix, select_rank
from .errors import DataError, DimensionError, NumericalError
from .experiments import EXPERIMENTS
from .regression import fit_ols, forecast, prediction_interval
from .sparse import ms_fasr, pd_lasso_interval
from .tensor import read_series_csv, read_series_dir

USAGE_ERROR, DATA_ERROR, NUMERICAL_ERROR = 2, 3, 4


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"could not read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise DataError(f"config {path} must hold a JSON object")
    return cfg


def _merge(cfg, args, names):
    """Flag values override config-file values; None means unset."""
    out = dict(cfg)
    for name in names:
        val = getattr(args, name, None)
        if val is not None:
            out[name] = val
    return out


def _read_series(params):
    if params.get("input_dir"):
        return read_series_dir(params["input_dir"])
    if not params.get("input"):
        raise DataError("an input CSV (or --input-dir) is required")
    dims = params.get("dims")
    if isinstance(dims, str):
        dims = [int(x) for x in dims.split(",") if x.strip()]
    return read_series_csv(params["input"], dims)


def _read_vector(path, what):
    try:
        arr = np.loadtxt(path, delimiter=",", dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise DataError(f"could not read {what} from {path}: {exc}") from exc
    arr = np.atleast_1d(arr)
    if arr.ndim != 1:
        raise DataError(f"{what} file {path} must hold one column")
    return arr


def _read_matrix(path, what):
    try:
        arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"could not read {what} from {path}: {exc}") from exc
    return arr


def _resolve_rank(series, params):
    rank = params.get("rank", "auto")
    if rank == "auto" or rank is None:
        r_max = params.get("rank_max") or min(series.dims) - 1
        return select_rank(series, int(r_max))
    return int(rank)


def cmd_estimate(args):
    params = _merge(_load_config(args.config), args,
                    ("input", "input_dir", "dims", "rank", "rank_max", "output"))
    series = _read_series(params)
    r = _resolve_rank(series, params)
    fit = cc_iso(series, r)
    out = params.get("output", "cpfit.json")
    fit.to_json(out)
    sig = ", ".join(f"{s:.6g}" for s in fit.signals)
    print(
        f"rank={fit.rank} signals=[{sig}] converged={fit.converged} "
        f"iterations={fit.iterations_used} gap={fit.final_gap:.3g} -> {out}"
    )
    return 0


def _parse_lambda(value):
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if value in ("auto", "bic", "rate"):
        return value
    if value == "inf":
        return math.inf
    try:
        return float(value)
    except ValueError as exc:
        raise DataError(f"bad lambda value {value!r}") from exc


def cmd_forecast(args):
    params = _merge(_load_config(args.config), args,
                    ("input", "input_dir", "dims", "target", "predictors",
                     "mode", "interval", "level", "horizon", "rank", "rank_max",
                     "lam", "threshold_lambda", "intercept", "output"))
    series = _read_series(params)
    y = _read_vector(params.get("target"), "target series")
    T = len(series)
    if y.size != T:
        raise DataError(
            f"target length {y.size} does not match series length {T} "
            f"(offsets: target rows 1..{y.size}, tensor rows 1..{T})"
        )
    w = None
    if params.get("predictors"):
        w = _read_matrix(params["predictors"], "predictors")
        if w.shape[0] != T:
            raise DataError(
                f"predictor rows {w.shape[0]} do not match series length {T}"
            )
    mode = params.get("mode", "di")
    interval_kind = params.get("interval", "gamma2")
    level = float(params.get("level", 0.95))
    h = int(params.get("horizon", 1))
    r = _resolve_rank(series, params)

    if mode == "di":
        if interval_kind not in ("gamma1", "gamma2"):
            raise DataError("di mode supports interval gamma1 or gamma2")
        cp = cc_iso(series, r)
        dfit = fit_ols(y, w, cp, h)
        resid = residual_vec_matrix(series, cp)
        if interval_kind == "gamma1":
            gamma = gamma1_diagonal(cp, resid, h)
        else:
            lam = params.get("threshold_lambda")
            lam = float(lam) if lam is not None else default_threshold_level(
                series.d, T, cp.signals[-1]
            )
            cov = threshold_covariance(resid, "scad", lam)
            gamma = gamma2_thresholded(cp, cov)
        w_T = w[-1] if w is not None else np.empty(0)
        pi = prediction_interval(dfit, cp, gamma, w_T, level)
        payload = {
            "schema_version": 1,
            "mode": "di",
            "rank": r,
            "interval_kind": interval_kind,
            "point": pi.point,
            "interval": pi.to_dict(),
        }
    elif mode == "msfasr":
        if w is None:
            raise DataError("msfasr mode needs --predictors")
        lam = _parse_lambda(params.get("lam", "auto"))
        fit = ms_fasr(
            y, w, series, r, h,
            lam=("auto" if lam is None else lam),
            add_intercept=bool(params.get("intercept", False)),
        )
        payload = {
            "schema_version": 1,
            "mode": "msfasr",
            "rank": r,
            "point": fit.forecast,
            "fit": fit.to_dict(),
        }
        if interval_kind == "pdlasso":
            cp = fit._cp
            resid = residual_vec_matrix(series, cp)
            lam_thr = params.get("threshold_lambda")
            lam_thr = float(lam_thr) if lam_thr is not None else \
                default_threshold_level(series.d, T, cp.signals[-1])
            cov = threshold_covariance(resid, "scad", lam_thr)
            pi = pd_lasso_interval(fit, cp, cov, w[-1], level)
            payload["interval_kind"] = "pdlasso"
            payload["interval"] = pi.to_dict()
            payload["point"] = pi.point
        elif interval_kind not in (None, "none"):
            raise DataError("msfasr mode supports interval pdlasso (or none)")
    else:
        raise DataError(f"unknown mode {mode!r}")

    out = params.get("output", "forecast.json")
    with open(out, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
    if "interval" in payload:
        iv = payload["interval"]
        print(
            f"forecast={payload['point']:.6g} "
            f"{int(level * 100)}% PI [{iv['lower']:.6g}, {iv['upper']:.6g}] "
            f"std={iv['std']:.6g} -> {out}"
        )
    else:
        print(f"forecast={payload['point']:.6g} -> {out}")
    return 0


def cmd_experiment(args):
    params = _merge(_load_config(args.config), args,
                    ("name", "reps", "seed", "output_dir", "threads"))
    name = params.get("name")
    if name not in EXPERIMENTS:
        raise DataError(
            f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}"
        )
    driver = EXPERIMENTS[name]
    kwargs = dict(params.get("driver_args", {}))
    if params.get("reps") is not None:
        kwargs["reps"] = int(params["reps"])
    if params.get("seed") is not None:
        kwargs["seed"] = int(params["seed"])
    if params.get("threads") is not None:
        kwargs["n_jobs"] = int(params["threads"])
    report = driver(**kwargs)
    outdir = params.get("output_dir", f"experiment_{name}")
    report.write(outdir)
    print(
        f"{report.name}: {report.replications} reps/cell, "
        f"{report.failures} failures, {report.wall_time_s:.1f}s -> {outdir}"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tensordi",
        description="Diffusion-index forecasting from tensor-valued series",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit the CP factor model")
    est.add_argument("--input", help="series CSV (rows = time, canonical vec order)")
    est.add_argument("--input-dir", dest="input_dir",
                     help="directory of per-slice CSV matrices (K=2)")
    est.add_argument("--dims", help="comma-separated mode sizes, e.g. 8,8")
    est.add_argument("--rank", help="factor count, or 'auto'")
    est.add_argument("--rank-max", dest="rank_max", type=int,
                     help="cap for automatic rank selection")
    est.add_argument("--config", help="JSON config file")
    est.add_argument("--output", help="output JSON path")
    est.set_defaults(func=cmd_estimate)

    fc = sub.add_parser("forecast", help="diffusion-index or sparse forecast")
    fc.add_argument("--input", help="series CSV")
    fc.add_argument("--input-dir", dest="input_dir")
    fc.add_argument("--dims")
    fc.add_argument("--target", help="target series CSV (one column)")
    fc.add_argument("--predictors", help="predictor matrix CSV")
    fc.add_argument("--mode", choices=("di", "msfasr"))
    fc.add_argument("--interval", choices=("gamma1", "gamma2", "pdlasso", "none"))
    fc.add_argument("--level", type=float)
    fc.add_argument("--horizon", type=int)
    fc.add_argument("--rank")
    fc.add_argument("--rank-max", dest="rank_max", type=int)
    fc.add_argument("--lambda", dest="lam",
                    help="penalty: number, 'auto', 'bic', 'rate', or 'inf'")
    fc.add_argument("--threshold-lambda", dest="threshold_lambda", type=float,
                    help="covariance threshold level (default: rate rule)")
    fc.add_argument("--intercept", action="store_true", default=None,
                    help="prepend an unpenalized intercept to the predictors")
    fc.add_argument("--config")
    fc.add_argument("--output")
    fc.set_defaults(func=cmd_forecast)

    ex = sub.add_parser("experiment", help="run a Monte-Carlo experiment")
    ex.add_argument("--name", help=f"one of {sorted(EXPERIMENTS)}")
    ex.add_argument("--reps", type=int)
    ex.add_argument("--seed", type=int)
    ex.add_argument("--output-dir", dest="output_dir")
    ex.add_argument("--threads", type=int, help="replication worker count")
    ex.add_argument("--config", help="JSON config (driver_args: {...})")
    ex.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except (DataError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR
    return code


if __name__ == "__main__":
    sys.exit(main())
