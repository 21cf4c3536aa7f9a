"""Command-line front end: ``dmmtl {simulate,train,evaluate,tune,explain}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence
or non-convergence.
"""

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from dmmtl import baselines
from dmmtl.checkpoint import Checkpoint, check_matches, load_checkpoint, save_checkpoint
from dmmtl.config import TUNED_LOG, load_config
from dmmtl.data import generate, load_csv, normalize, save_csv, split
from dmmtl.diagnostics import (
    ImportanceReport,
    global_importance,
    local_importance,
    metrics_report,
    relative_rmse,
    selection_metrics,
    threshold_sweep,
)
from dmmtl.errors import ConfigError, ConvergenceError, DataError, DivergenceError
from dmmtl.model import predict
from dmmtl.optimizer import train
from dmmtl.rng import substream

log = logging.getLogger("dmmtl")

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 2, 3, 4


# ----------------------------------------------------------------------------
# helpers


def _num(v):
    """Text form of a number for reports: exact round-trip for floats, blank for NaN."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(v) if isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, bool) else v for v in r])


def _out_dir(cfg):
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"cannot create output directory {out}: {err.strerror}") from None
    return out


def _dataset(cfg):
    if cfg.generator is not None:
        return generate(cfg.generator)
    return load_csv(cfg.data.manifest, cfg.data.data, cfg.data.truth)


def _splits(cfg, data):
    return split(data, cfg.split, seed=cfg.seed)


def _raw_splits(cfg, data):
    return split(data, cfg.split, seed=cfg.seed, normalize_splits=False)


def _fit(cfg, tr, va, topo_block=None, train_cfg=None, init=None, start_epoch=0, callback=None):
    """Fit the configured model; returns ``(model, epochs_run_total, report_or_None)``."""
    if cfg.model == "dmmtl":
        tb = topo_block or cfg.topology
        topo = tr.stage_topology(tb.nh, tb.D1, tb.D2, tb.feed_prev_outputs)
        params, rep = train(tr, topo, train_cfg or cfg.train_config(), val=va, init=init, start_epoch=start_epoch, callback=callback)
        return params, start_epoch + rep.epochs_run, rep
    return baselines.fit_stagewise(cfg.model, tr, va), 0, None


def _predict(kind, model, X):
    return predict(model, X) if kind == "dmmtl" else baselines.predict_stagewise(model, X)


# ----------------------------------------------------------------------------
# commands


def cmd_simulate(cfg, args):
    if cfg.generator is None:
        raise ConfigError("simulate needs a 'generator' block")
    out = _out_dir(cfg)
    data = generate(cfg.generator)
    save_csv(data, out / "data.csv", out / "manifest.csv", out / "truth.json")
    print(f"simulated case {cfg.generator.case_id}: {data.n_samples} samples, {data.K} stages, "
          f"inputs per stage {list(data.nx)}, outputs per stage {list(data.ny)}")
    print(f"wrote {out / 'data.csv'}, {out / 'manifest.csv'}, {out / 'truth.json'}")
    return 0


def cmd_train(cfg, args):
    out = _out_dir(cfg)
    data = _dataset(cfg)
    tr, va, te = _splits(cfg, data)
    init, start = None, 0
    if args.checkpoint:
        ck = load_checkpoint(args.checkpoint)
        if ck.kind != "dmmtl" or cfg.model != "dmmtl":
            raise ConfigError("only dmmtl checkpoints can be resumed")
        check_matches(ck, tr)
        init, start = ck.model, ck.epoch
    log_path = out / "train_log.jsonl"
    with open(log_path, "w") as fh:
        fh.write(json.dumps({"header": True, "started": time.strftime("%Y-%m-%dT%H:%M:%S"), "model": cfg.model, "seed": cfg.seed}) + "\n")

        def record(rec):
            fh.write(json.dumps(rec) + "\n")

        model, epoch, rep = _fit(cfg, tr, va, init=init, start_epoch=start, callback=record)
    meta = {"nx": list(tr.nx), "ny": list(tr.ny), "config": _jsonable(cfg.to_dict())}
    save_checkpoint(out / "checkpoint.json", Checkpoint(cfg.model, model, tr.stats, epoch, meta))
    y_mean = [y.mean(axis=0) for y in tr.Y]
    val_rmse = float(np.nanmean(np.concatenate(relative_rmse(va.Y, _predict(cfg.model, model, va.X), y_mean))))
    summary = {"model": cfg.model, "epochs": epoch, "val_rmse": val_rmse}
    if rep is not None:
        summary.update(restarts=rep.restarts, best_epoch=rep.best_epoch, final_objective=rep.objective[-1])
    (out / "train_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(f"trained {cfg.model}: {epoch} epochs, validation relative RMSE {val_rmse:.4f}")
    return 0


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: list(o) if isinstance(o, tuple) else str(o)))


def _checkpoint_for(cfg, args):
    path = Path(args.checkpoint) if args.checkpoint else Path(cfg.out) / "checkpoint.json"
    if not path.exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    return load_checkpoint(path)


def cmd_evaluate(cfg, args):
    out = _out_dir(cfg)
    ck = _checkpoint_for(cfg, args)
    if ck.stats is None:
        raise DataError("checkpoint carries no normalisation statistics")
    data = _dataset(cfg)
    tr, _, te = (normalize(d, ck.stats) for d in _raw_splits(cfg, data))
    check_matches(ck, te)
    y_mean = [y.mean(axis=0) for y in tr.Y]
    pred = _predict(ck.kind, ck.model, te.X)
    thr = threshold_sweep(*cfg.evaluate.thresholds)
    rep = metrics_report(te.Y, pred, y_mean, cfg.evaluate.levels, thr)
    naive = metrics_report(te.Y, [np.broadcast_to(m, y.shape) for m, y in zip(y_mean, te.Y)], y_mean, cfg.evaluate.levels)

    rows = []
    for k, r in enumerate(rep.per_output):
        for j, v in enumerate(r):
            rows.append([k + 1, j + 1, te.y_names[k][j], float(v), float(naive.per_output[k][j])])
    _write_csv(out / "metrics_per_output.csv", ["stage", "output", "name", "rmse", "naive_rmse"], rows)
    _write_csv(out / "metrics_stage.csv", ["stage", "mean_rmse"], [[k + 1, float(v)] for k, v in enumerate(rep.stage_means())])
    _write_csv(out / "metrics_summary.csv", ["method", "mean_rmse"], [[ck.kind, rep.mean], ["naive_mean", naive.mean]])
    q = rep.quantiles if rep.quantiles is not None else [math.nan] * len(rep.levels)
    _write_csv(out / "quantiles.csv", ["level", "rmse"], [[float(l), float(v)] for l, v in zip(rep.levels, q)])
    _write_csv(out / "threshold_counts.csv", ["threshold", "n_outputs_below"], [[float(t), int(c)] for t, c in zip(rep.thresholds, rep.counts_below)])
    print(f"test relative RMSE {rep.mean:.4f} over {sum(len(r) for r in rep.per_output)} outputs")
    return 0


def cmd_explain(cfg, args):
    out = _out_dir(cfg)
    ck = _checkpoint_for(cfg, args)
    data = _dataset(cfg)
    full = normalize(data, ck.stats) if ck.stats is not None else data
    check_matches(ck, full)
    top = cfg.explain.top
    if ck.kind == "dmmtl":
        g = global_importance(ck.model)
    else:
        g = ImportanceReport(baselines.coefficient_importance(ck.model, full.nx))
    rows = [[k + 1, i + 1, full.x_names[k][i], float(v)] for k, s in enumerate(g.scores) for i, v in enumerate(s)]
    _write_csv(out / "global_importance.csv", ["stage", "input", "name", "score"], rows)
    _write_csv(out / "global_top.csv", ["rank", "stage", "input", "name", "score"],
               [[r + 1, k + 1, i + 1, full.x_names[k][i], v] for r, (k, i, v) in enumerate(g.top(top))])
    if full.truth is not None:
        p, r, a = selection_metrics(g.flat(), np.concatenate(full.truth.mask))
        _write_csv(out / "selection.csv", ["precision", "recall", "auc"], [[float(p), float(r), float(a)]])
    print("global importance, top inputs: " + ", ".join(f"{full.x_names[k][i]} ({v:.4g})" for k, i, v in g.top(top)))

    if args.target is None:
        if args.samples:
            raise ConfigError("--samples needs --target")
        return 0
    if ck.kind != "dmmtl":
        raise ConfigError("local importance needs a dmmtl checkpoint")
    target = _parse_target(args.target, full)
    idx = None
    if args.samples:
        # sample ids are 1-based data-row numbers
        pos = {int(v) + 1: n for n, v in enumerate(full.ids)}
        try:
            wanted = [int(s) for s in args.samples.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"--samples must be comma-separated integers, got {args.samples!r}") from None
        missing = [s for s in wanted if s not in pos]
        if missing or not wanted:
            raise ConfigError(f"unknown sample id(s): {missing}" if missing else "--samples is empty")
        idx = [pos[s] for s in wanted]
    loc = local_importance(ck.model, full.X, target, samples=idx)
    k, j = target
    tag = f"y{k + 1}_{j + 1}"
    rows = [[kk + 1, i + 1, full.x_names[kk][i], float(v)] for kk, s in enumerate(loc.scores) for i, v in enumerate(s)]
    _write_csv(out / f"local_importance_{tag}.csv", ["stage", "input", "name", "score"], rows)
    _write_csv(out / f"local_top_{tag}.csv", ["rank", "stage", "input", "name", "score"],
               [[r + 1, kk + 1, i + 1, full.x_names[kk][i], v] for r, (kk, i, v) in enumerate(loc.top(top))])
    print(f"local importance for {full.y_names[k][j]}: " + ", ".join(f"{full.x_names[kk][i]} ({v:.4g})" for kk, i, v in loc.top(top)))
    return 0


def _parse_target(text, data):
    try:
        k, j = (int(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"--target must look like STAGE:OUTPUT (1-based), got {text!r}") from None
    if not (1 <= k <= data.K) or not (1 <= j <= data.ny[k - 1]):
        raise ConfigError(f"unknown target {text}: stage {k} has no output {j}")
    return k - 1, j - 1


# ---- tuning


def sample_trials(tuning, base_train, base_nh, n, seed):
    """Draw ``n`` hyperparameter settings; log-uniform for penalties/steps, uniform integer for nh."""
    rng = substream(seed, "tuner")
    trials = []
    for _ in range(n):
        t = {}
        for name in TUNED_LOG:
            r = getattr(tuning, name)
            t[name] = float(np.exp(rng.uniform(np.log(r[0]), np.log(r[1])))) if r is not None else float(getattr(base_train, name))
        t["nh"] = int(rng.integers(tuning.nh[0], tuning.nh[1] + 1)) if tuning.nh is not None else int(base_nh)
        trials.append(t)
    return trials


def _run_trial(cfg, trial):
    data = _dataset(cfg)
    tr, va, _ = _splits(cfg, data)
    tcfg = cfg.train_config().replace(**{k: trial[k] for k in TUNED_LOG})
    topo = cfg.topology.__class__(**{**asdict(cfg.topology), "nh": trial["nh"]})
    try:
        model, _, _ = _fit(cfg, tr, va, topo_block=topo, train_cfg=tcfg)
    except (DivergenceError, ConvergenceError) as err:
        return {"status": "diverged", "val_sse": math.nan, "error": str(err)}
    pred = _predict(cfg.model, model, va.X)
    sse = float(sum(np.sum((y - p) ** 2) for y, p in zip(va.Y, pred)))
    return {"status": "ok", "val_sse": sse}


def cmd_tune(cfg, args):
    if cfg.model != "dmmtl":
        raise ConfigError("tune searches dmmtl hyperparameters; set model to dmmtl")
    out = _out_dir(cfg)
    seed = cfg.seed if cfg.tuning.seed is None else cfg.tuning.seed
    trials = sample_trials(cfg.tuning, cfg.train, cfg.topology.nh, cfg.tuning.trials, seed)
    _dataset(cfg)  # fail early on unreadable data
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_trial, [cfg] * len(trials), trials))
    else:
        results = [_run_trial(cfg, t) for t in trials]
    rows = [[i + 1, t["lambda_x"], t["lam"], t["gamma"], t["prox_step"], t["nh"], r["val_sse"], r["status"]] for i, (t, r) in enumerate(zip(trials, results))]
    _write_csv(out / "trials.csv", ["trial", "lambda_x", "lam", "gamma", "prox_step", "nh", "val_sse", "status"], rows)
    ok = [i for i, r in enumerate(results) if r["status"] == "ok"]
    if not ok:
        print("every tuning trial diverged", file=sys.stderr)
        return EXIT_DIVERGED
    best = min(ok, key=lambda i: (results[i]["val_sse"], i))
    doc = {"trial": best + 1, "val_sse": results[best]["val_sse"], "train": {k: trials[best][k] for k in TUNED_LOG}, "topology": {"nh": trials[best]["nh"]}}
    (out / "best.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(f"best of {len(trials)} trials: #{best + 1} with validation SSE {results[best]['val_sse']:.6g}")
    return 0


# ----------------------------------------------------------------------------
# entry point

COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "tune": cmd_tune,
    "explain": cmd_explain,
}


def build_parser():
    p = argparse.ArgumentParser(prog="dmmtl", description="Stage-chained multi-task regression for multistage processes.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the top-level seed")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--checkpoint", help="checkpoint to evaluate/explain, or to resume training from")
    p.add_argument("--target", help="output for local importance, STAGE:OUTPUT, 1-based")
    p.add_argument("--samples", help="comma-separated 1-based data-row numbers restricting local importance")
    p.add_argument("--jobs", type=int, default=1, help="parallel tuning trials")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. train.lambda_x=0.1 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config, args.overrides, seed=args.seed, out=args.out)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, ConvergenceError) as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
