"""Command-line interface: ingest CSVs, fit, predict, cross-validate, simulate, benchmark.

Exit status: 0 success, 2 invalid input, 3 fitting/convergence failure,
4 file-system error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import em, select, simbench
from ._accel import backend_name
from .core import LossSpec, OmicsDataset, PenaltySpec, ThetaState, check_dataset
from .errors import OgClustError, ValidationError

log = logging.getLogger("ogclust")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_FIT = 3
EXIT_IO = 4

METRIC_COLUMNS = ("method", "model", "estK", "ARI", "FP", "FN", "RMSE", "R2")
THETA_FORMAT = 1


def fmt(x):
    """17 significant digits: enough for an exact float round-trip."""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


# ---------------------------------------------------------------------------
# ingestion


def _read_table(path, what):
    """Header + (id, numeric cells) rows. Two passes so the matrix is allocated once."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty {what} file") from None
        n = sum(1 for row in reader if row)
    if len(header) < 2:
        raise ValidationError(f"{path}: {what} file needs an id column and at least one value column")
    cols = header[1:]
    out = np.empty((n, len(cols)))
    ids = []
    seen = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        i = 0
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}: line {line} has {len(row)} fields, header has {len(header)}")
            sid = row[0]
            if sid in seen:
                raise ValidationError(f"{path}: duplicate sample id {sid!r} on lines {seen[sid]} and {line}")
            seen[sid] = line
            ids.append(sid)
            for j, cell in enumerate(row[1:]):
                try:
                    out[i, j] = float(cell)
                except ValueError:
                    raise ValidationError(
                        f"{path}: non-numeric value {cell!r} at line {line}, column {cols[j]!r}") from None
            i += 1
    return ids, cols, out


def _align(ids, ref_ids, path):
    pos = {s: i for i, s in enumerate(ids)}
    missing = [s for s in ref_ids if s not in pos]
    if missing:
        raise ValidationError(f"{path}: sample id {missing[0]!r} missing"
                              + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
    extra = [s for s in ids if s not in set(ref_ids)]
    if extra:
        raise ValidationError(f"{path}: sample id {extra[0]!r} not present in the outcome file")
    return np.array([pos[s] for s in ref_ids], dtype=int)


def ingest_csv(outcome_path, covariates_path=None, features_path=None) -> OmicsDataset:
    """Build a validated dataset from CSV files aligned by their first (id) column.

    The outcome file has one value column (continuous) or two (time, event).
    """
    if features_path is None:
        raise ValidationError("a features file is required")
    ids, ocols, Y = _read_table(outcome_path, "outcome")
    if len(ocols) not in (1, 2):
        raise ValidationError(f"{outcome_path}: outcome needs 1 column (y) or 2 (time, event)")
    fids, fcols, G = _read_table(features_path, "features")
    G = G[_align(fids, ids, features_path)]
    if covariates_path is not None:
        cids, ccols, X = _read_table(covariates_path, "covariates")
        X = X[_align(cids, ids, covariates_path)]
    else:
        ccols, X = [], np.zeros((len(ids), 0))
    if len(ocols) == 2:
        ev = Y[:, 1]
        bad = np.nonzero(~np.isin(ev, (0.0, 1.0)))[0]
        if len(bad):
            raise ValidationError(f"{outcome_path}: event value {float(ev[bad[0]]):g} for sample {ids[bad[0]]!r} "
                                  "is outside {0, 1}")
        data = OmicsDataset.survival(Y[:, 0], ev, G, X, ids, fcols, ccols)
    else:
        data = OmicsDataset.continuous(Y[:, 0], G, X, ids, fcols, ccols)
    return check_dataset(data)


# ---------------------------------------------------------------------------
# theta serialisation


def sorted_theta(theta: ThetaState):
    """Clusters in ascending-intercept order, plus the position of the zero column."""
    order = theta.display_order()
    ref = int(np.nonzero(order == theta.K - 1)[0][0])
    return theta.permuted(order), ref


def theta_to_dict(theta: ThetaState, feature_ids, covariate_ids, seed=None, trace=(), reference=None,
                  extra=None):
    nz = np.argwhere(theta.gamma != 0)
    d = {
        "format": THETA_FORMAT,
        "K": theta.K,
        "beta0": [float(v) for v in theta.beta0],
        "beta": [float(v) for v in theta.beta],
        "covariates": list(covariate_ids),
        "sigma": float(theta.sigma),
        "gamma": [[str(feature_ids[j]), int(k), float(theta.gamma[j, k])] for j, k in nz],
        "features": list(feature_ids),
        "reference_cluster": theta.K - 1 if reference is None else int(reference),
        "gate_intercept": None if theta.gate_intercept is None else [float(v) for v in theta.gate_intercept],
        "loss": {"kind": theta.loss.kind, "tau": float(theta.loss.tau),
                 "z": None if theta.loss.z is None else float(theta.loss.z)},
        "fitted_tau": None if theta.tau is None else [float(v) for v in theta.tau],
        "penalty": {"kind": theta.penalty.kind, "lambda": float(theta.penalty.lam),
                    "alpha": float(theta.penalty.alpha)},
        "seed": seed,
        "objective_trace": [float(v) for v in trace],
    }
    if extra:
        d.update(extra)
    return d


def theta_from_dict(d) -> ThetaState:
    feats = d["features"]
    pos = {f: j for j, f in enumerate(feats)}
    K = int(d["K"])
    gamma = np.zeros((len(feats), K))
    for fid, k, v in d["gamma"]:
        gamma[pos[fid], int(k)] = float(v)
    loss = LossSpec(d["loss"]["kind"], d["loss"]["tau"], d["loss"]["z"])
    pen = PenaltySpec(d["penalty"]["kind"], d["penalty"]["lambda"], d["penalty"]["alpha"])
    gi = d.get("gate_intercept")
    tau = d.get("fitted_tau")
    return ThetaState(beta0=d["beta0"], beta=d["beta"], gamma=gamma, sigma=d["sigma"], loss=loss,
                      penalty=pen, tau=tau, gate_intercept=gi)


def write_json(path, obj):
    text = json.dumps(obj, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_theta(path) -> tuple:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("format") != THETA_FORMAT:
        raise ValidationError(f"{path}: unsupported theta format {d.get('format')!r}")
    return theta_from_dict(d), d


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def write_assignments(path, theta: ThetaState, ids, G, X, hard=False):
    Pi, z, yhat = em.predict(theta, G, X, hard=hard)
    header = ["id"] + [f"pi_{k + 1}" for k in range(theta.K)] + ["z_hat", "y_hat"]
    rows = [[sid, *Pi[i], int(z[i]) + 1, yhat[i]] for i, sid in enumerate(ids)]
    write_rows(path, header, rows)
    return Pi, z, yhat


def emit_fit_report(fit: em.FitResult, data: OmicsDataset, out_dir, seed=None, extra=None):
    """theta.json and assignments.csv for one fit. Clusters are reported 1-based in display order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    th, ref = sorted_theta(fit.theta)
    d = theta_to_dict(th, data.feature_ids, data.covariate_ids, seed, fit.objective_trace, ref,
                      extra={"loglik": float(fit.loglik), "df": int(fit.df), "bic": float(fit.bic),
                             "converged": bool(fit.converged), "iterations": int(fit.iterations),
                             "restart_index": int(fit.restart_index),
                             "selected_features": [data.feature_ids[j] for j in fit.selected_features],
                             **(extra or {})})
    write_json(out / "theta.json", d)
    # predictions from the serialised parameters so a reload reproduces them exactly
    th_loaded = theta_from_dict(json.loads((out / "theta.json").read_text(encoding="utf-8")))
    write_assignments(out / "assignments.csv", th_loaded, data.sample_ids, data.G, data.X,
                      fit.controls.hard_predict)
    return d


def write_metrics(path, rows):
    write_rows(path, METRIC_COLUMNS, [[r.get(c, "") for c in METRIC_COLUMNS] for r in rows])


# ---------------------------------------------------------------------------
# configuration


DEFAULTS = {
    "k": 3, "k_grid": "2,3,4", "lambda": None, "lambda_grid": None, "penalty": "group", "alpha": 0.5,
    "loss": "gaussian", "restarts": 5, "seed": 0, "folds": 10, "max_iter": 500, "tol": 1e-7,
    "gate_intercept": False, "hard_predict": False, "no_standardize": False, "n_lambda": 30,
    "min_ratio": 0.01, "model": "2", "noise": "A", "survival": None, "n": 600, "q": 1000,
    "replicates": 20, "methods": "ogclust,sc", "study": "table", "name": None,
}
BOOL_KEYS = {"gate_intercept", "hard_predict", "no_standardize"}
INT_KEYS = {"k", "restarts", "seed", "folds", "max_iter", "n_lambda", "n", "q", "replicates"}
FLOAT_KEYS = {"alpha", "tol", "min_ratio", "lambda"}


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment. Keys use - or _."""
    cfg = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}: line {no} is not key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in DEFAULTS and k not in ("outcome", "features", "covariates", "out", "theta"):
            raise ValidationError(f"{path}: unknown key {k!r} on line {no}")
        cfg[k] = v
    return cfg


def _coerce(key, value):
    if value is None:
        return None
    if key in BOOL_KEYS:
        if isinstance(value, bool):
            return value
        v = str(value).lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{key}: expected a boolean, got {value!r}")
    try:
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{key}: cannot parse {value!r}") from None
    return value


def resolve(args):
    """Merge CLI > config file > defaults into a plain dict."""
    file_cfg = read_config(args.config) if args.config else {}
    out = {}
    keys = set(DEFAULTS) | {"outcome", "features", "covariates", "out", "theta"}
    for key in keys:
        cli_val = getattr(args, key, None)
        if cli_val is not None and cli_val is not False:
            val = cli_val
        elif key in file_cfg:
            val = file_cfg[key]
        else:
            val = DEFAULTS.get(key)
        out[key] = _coerce(key, val)
    return out


def parse_list(text, cast):
    if text is None:
        return None
    try:
        vals = [cast(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse list {text!r}") from None
    if not vals:
        raise ValidationError("empty list")
    return vals


def controls_from(cfg) -> em.FitControls:
    return em.FitControls(max_em_iters=cfg["max_iter"], em_tol=cfg["tol"], n_restarts=cfg["restarts"],
                          rng_seed=cfg["seed"], standardize=not cfg["no_standardize"],
                          gate_intercept=cfg["gate_intercept"], hard_predict=cfg["hard_predict"])


def worker_count():
    """Replicate workers: 1 unless OGCLUST_THREADS asks for more (capped by the CPU count)."""
    cap = os.environ.get("OGCLUST_THREADS")
    if not cap:
        return 1
    try:
        return min(os.cpu_count() or 1, max(1, int(cap)))
    except ValueError:
        raise ValidationError(f"OGCLUST_THREADS must be an integer, got {cap!r}") from None


def _require(cfg, *keys):
    for k in keys:
        if not cfg.get(k):
            raise ValidationError(f"--{k} is required")


def _load(cfg):
    _require(cfg, "outcome", "features")
    return ingest_csv(cfg["outcome"], cfg.get("covariates"), cfg["features"])


def _loss(cfg, data):
    kind = cfg["loss"]
    if data is not None and data.is_survival and kind == "gaussian":
        kind = "aft"
    return LossSpec(kind)


# ---------------------------------------------------------------------------
# commands


def cmd_fit(cfg):
    data = _load(cfg)
    _require(cfg, "out")
    ctrl = controls_from(cfg)
    loss = _loss(cfg, data)
    if cfg["lambda"] is None:
        grid = parse_list(cfg["lambda_grid"], float)
        path = select.fit_path(data, [cfg["k"]], grid, cfg["penalty"], loss, ctrl, cfg["alpha"],
                               cfg["n_lambda"], cfg["min_ratio"])
        fit = path.best.fit
    else:
        fit = em.fit(data, cfg["k"], PenaltySpec(cfg["penalty"], cfg["lambda"], cfg["alpha"]), loss, ctrl)
    emit_fit_report(fit, data, cfg["out"], cfg["seed"])
    print(f"K={fit.K} lambda={fit.lam:.6g} selected={len(fit.selected_features)} "
          f"loglik={fit.loglik:.6f} bic={fit.bic:.6f} -> {cfg['out']}")


def cmd_path(cfg):
    data = _load(cfg)
    _require(cfg, "out")
    ctrl = controls_from(cfg)
    ks = parse_list(cfg["k_grid"], int)
    grid = parse_list(cfg["lambda_grid"], float)
    res = select.fit_path(data, ks, grid, cfg["penalty"], _loss(cfg, data), ctrl, cfg["alpha"],
                          cfg["n_lambda"], cfg["min_ratio"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, e in enumerate(res.entries):
        f = e.fit
        rows.append([e.K, e.lam, e.bic if f else math.nan, f.df if f else "", f.loglik if f else math.nan,
                     len(f.selected_features) if f else "", "" if e.parent is None else e.parent,
                     "winner" if i == res.winner else ("ok" if f else f"failed: {e.error}")])
    write_rows(out / "path.csv", ["K", "lambda", "bic", "df", "loglik", "n_selected", "warm_start_from",
                                  "status"], rows)
    best = res.best
    emit_fit_report(best.fit, data, out, cfg["seed"])
    print(f"winner K={best.K} lambda={best.lam:.6g} bic={best.bic:.6f} -> {out}")


def cmd_predict(cfg):
    _require(cfg, "theta", "features", "out")
    theta, d = load_theta(cfg["theta"])
    fids, fcols, G = _read_table(cfg["features"], "features")
    if list(fcols) != list(d["features"]):
        pos = {f: j for j, f in enumerate(fcols)}
        missing = [f for f in d["features"] if f not in pos]
        if missing:
            raise ValidationError(f"{cfg['features']}: feature {missing[0]!r} missing")
        G = G[:, [pos[f] for f in d["features"]]]
    if cfg.get("covariates"):
        cids, ccols, X = _read_table(cfg["covariates"], "covariates")
        X = X[_align(cids, fids, cfg["covariates"])]
    else:
        X = np.zeros((len(fids), 0))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_assignments(out / "assignments.csv", theta, fids, G, X, cfg["hard_predict"])
    print(f"predicted {len(fids)} samples -> {out / 'assignments.csv'}")


def _truth_labels(path, ids):
    tids, _, T = _read_table(path, "truth")
    return T[_align(tids, ids, path), 0].astype(int)


def cmd_cv(cfg):
    data = _load(cfg)
    _require(cfg, "out")
    ctrl = controls_from(cfg)
    loss = _loss(cfg, data)
    if cfg["lambda"] is None:
        path = select.fit_path(data, [cfg["k"]], parse_list(cfg["lambda_grid"], float), cfg["penalty"],
                               loss, ctrl, cfg["alpha"], cfg["n_lambda"], cfg["min_ratio"])
        pen = path.best.fit.theta.penalty
    else:
        pen = PenaltySpec(cfg["penalty"], cfg["lambda"], cfg["alpha"])
    rep = select.kfold_cv(data, cfg["k"], pen, loss, ctrl, cfg["folds"], cfg["seed"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ari = math.nan
    if cfg.get("truth"):
        z = _truth_labels(cfg["truth"], data.sample_ids)
        done = rep.labels >= 0
        ari = simbench.ari(rep.labels[done], z[done])
    name = cfg["name"] or Path(cfg["outcome"]).stem
    write_metrics(out / "metrics.csv", [{"method": "ogclust", "model": name, "estK": cfg["k"], "ARI": ari,
                                         "FP": "", "FN": "", "RMSE": rep.rmse, "R2": rep.r2}])
    write_rows(out / "cv_predictions.csv", ["id", "fold", "y_hat", "label"],
               [[sid, int(rep.folds[i]) + 1, rep.yhat[i], int(rep.labels[i]) + 1]
                for i, sid in enumerate(data.sample_ids)])
    print(f"RMSE={rep.rmse:.6f} R2={rep.r2:.6f} failed folds={rep.failed_folds} -> {out}")


def _sim_config(cfg):
    if cfg["survival"]:
        return simbench.SimConfig.survival_model(cfg["survival"], n=cfg["n"], q=cfg["q"], seed=cfg["seed"])
    return simbench.SimConfig.model(int(cfg["model"]), n=cfg["n"], q=cfg["q"], noise=cfg["noise"],
                                    seed=cfg["seed"])


def cmd_simulate(cfg):
    _require(cfg, "out")
    sc = _sim_config(cfg)
    data, truth = simbench.generate_dataset(sc)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ids = data.sample_ids
    if data.is_survival:
        write_rows(out / "outcome.csv", ["id", "time", "event"],
                   [[s, data.time[i], int(data.event[i])] for i, s in enumerate(ids)])
    else:
        write_rows(out / "outcome.csv", ["id", "y"], [[s, data.y[i]] for i, s in enumerate(ids)])
    write_rows(out / "covariates.csv", ["id", *data.covariate_ids],
               [[s, *data.X[i]] for i, s in enumerate(ids)])
    write_rows(out / "features.csv", ["id", *data.feature_ids], [[s, *data.G[i]] for i, s in enumerate(ids)])
    write_rows(out / "truth.csv", ["id", "cluster"], [[s, int(truth.Z[i]) + 1] for i, s in enumerate(ids)])
    write_json(out / "design.json", {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(sc).items()})
    print(f"simulated {sc.name} n={sc.n} q={sc.q} seed={sc.seed} -> {out}")


def cmd_bench(cfg):
    _require(cfg, "out")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    workers = worker_count()
    study = cfg["study"]
    opts = simbench.BenchOptions(folds=cfg["folds"], restarts=min(cfg["restarts"], 3))
    if study == "table":
        models = [simbench.SimConfig.model(int(m), n=cfg["n"], q=cfg["q"])
                  for m in parse_list(cfg["model"], int)]
        methods = parse_list(cfg["methods"], str)
        rows, recs = simbench.run_benchmark(models, methods, cfg["replicates"], opts=opts,
                                            master_seed=cfg["seed"], workers=workers)
        write_metrics(out / "metrics.csv", rows)
        write_rows(out / "replicates.csv", ["method", "model", "seed", "estK", "ARI", "FP", "FN", "RMSE", "R2",
                                            "n_selected", "error"],
                   [[r["method"], r["model"], r["seed"], r.get("estK", ""), r.get("ARI", math.nan),
                     r.get("FP", ""), r.get("FN", ""), r.get("RMSE", math.nan), r.get("R2", math.nan),
                     r.get("n_selected", ""), r.get("error") or ""] for r in recs])
    elif study == "robust":
        base = simbench.SimConfig.model(2, n=cfg["n"], q=cfg["q"])
        rows, recs = simbench.robustness_study(replicates=cfg["replicates"], master_seed=cfg["seed"],
                                               base=base, workers=workers)
        write_rows(out / "robust_summary.csv", ["setting", "loss", "replicates", "failed", "RMSE", "R2", "ARI",
                                                "FN", "n_selected"],
                   [[r[c] for c in ("setting", "loss", "replicates", "failed", "RMSE", "R2", "ARI", "FN",
                                    "n_selected")] for r in rows])
        curve = []
        for r in recs:
            for c in r.get("curve", []):
                curve.append([r["setting"], r["loss"], r["seed"], c["lam"], c["n_selected"], c["RMSE"],
                              c["R2"], c["ARI"], c["FN"]])
        write_rows(out / "robust_curves.csv", ["setting", "loss", "seed", "lambda", "n_selected", "RMSE",
                                               "R2", "ARI", "FN"], curve)
    elif study == "survival":
        rows, _ = simbench.survival_study(cfg["survival"] or "D", cfg["replicates"], master_seed=cfg["seed"],
                                          workers=workers)
        write_rows(out / "survival_summary.csv", ["M", "ogclust_ARI", "ogclust_genes", "sc_ARI", "sc_genes"],
                   [[r[c] for c in ("M", "ogclust_ARI", "ogclust_genes", "sc_ARI", "sc_genes")] for r in rows])
    else:
        raise ValidationError(f"unknown study {study!r}")
    print(f"{study} benchmark with {cfg['replicates']} replicate(s) on {workers} worker(s) -> {out}")


COMMANDS = {"fit": cmd_fit, "path": cmd_path, "predict": cmd_predict, "cv": cmd_cv,
            "simulate": cmd_simulate, "bench": cmd_bench}


def build_parser():
    p = argparse.ArgumentParser(prog="ogclust", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key = value file; command-line flags override it")
    p.add_argument("--outcome")
    p.add_argument("--covariates")
    p.add_argument("--features")
    p.add_argument("--theta", help="theta.json from an earlier fit (predict)")
    p.add_argument("--truth", help="id,cluster CSV for scoring cv labels")
    p.add_argument("--out")
    p.add_argument("--k", type=int)
    p.add_argument("--k-grid", dest="k_grid")
    p.add_argument("--lambda", dest="lambda", type=float)
    p.add_argument("--lambda-grid", dest="lambda_grid")
    p.add_argument("--n-lambda", dest="n_lambda", type=int)
    p.add_argument("--min-ratio", dest="min_ratio", type=float)
    p.add_argument("--penalty", choices=["lasso", "group"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--loss", choices=["gaussian", "huber", "adhuber", "median", "aft"])
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--gate-intercept", dest="gate_intercept", action="store_true")
    p.add_argument("--hard-predict", dest="hard_predict", action="store_true")
    p.add_argument("--no-standardize", dest="no_standardize", action="store_true")
    p.add_argument("--model", help="simulation model 1-4 (comma list for bench)")
    p.add_argument("--noise", choices=list(simbench.NOISE_SETTINGS))
    p.add_argument("--survival", choices=sorted(simbench.SURVIVAL_MODELS))
    p.add_argument("--n", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--methods")
    p.add_argument("--study", choices=["table", "robust", "survival"])
    p.add_argument("--name", help="model label written to metrics.csv")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    log.info("kernel backend: %s", backend_name())
    try:
        cfg = resolve(args)
        cfg["truth"] = args.truth
        COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OgClustError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"i/o error{where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
