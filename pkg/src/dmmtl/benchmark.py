"""Simulation benchmark: DMMTL against linear baselines and the SoV oracle."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from dmmtl import baselines
from dmmtl.data import GeneratorSpec, generate, split
from dmmtl.diagnostics import global_importance, relative_rmse, selection_metrics
from dmmtl.losses import TrainConfig
from dmmtl.model import predict
from dmmtl.optimizer import train

log = logging.getLogger(__name__)

BENCH_TRAIN = TrainConfig()
BENCH_NH = 40
METHODS = ("dmmtl", "men", "en", "ridge", "oracle")


@dataclass
class CaseResult:
    case_id: int
    seed: int
    rmse: dict  # method -> list of per-stage arrays of per-output relative RMSE
    selection: dict = field(default_factory=dict)  # method -> (precision, recall, auc); "<baseline>_all" scores every stage's models
    seconds: dict = field(default_factory=dict)

    def mean(self, method):
        return float(np.nanmean(np.concatenate(self.rmse[method])))

    def stage_means(self, method):
        return np.array([np.nanmean(r) for r in self.rmse[method]])


def run_case(case_id, seed, n_samples=2000, fractions=(0.6, 0.2, 0.2), config=BENCH_TRAIN, nh=BENCH_NH, methods=METHODS, spec_overrides=None):
    """Generate one dataset, fit every method on the train split and score it on the test split."""
    spec = GeneratorSpec(case_id=case_id, n_samples=n_samples, seed=seed, **(spec_overrides or {}))
    return run_dataset(generate(spec), seed, fractions, config, nh, methods, case_id)


def run_dataset(data, seed, fractions=(0.6, 0.2, 0.2), config=BENCH_TRAIN, nh=BENCH_NH, methods=METHODS, case_id=0):
    """Benchmark every method on an existing dataset (it must carry the generator truth)."""
    tr, va, te = split(data, fractions, seed=seed)
    y_mean = [y.mean(axis=0) for y in tr.Y]
    mask = np.concatenate(data.truth.mask)
    res = CaseResult(case_id, seed, {})

    def score(name, pred):
        res.rmse[name] = relative_rmse(te.Y, pred, y_mean)

    for name in methods:
        t0 = time.perf_counter()
        if name == "dmmtl":
            params, _ = train(tr, tr.stage_topology(nh), config.replace(seed=seed), val=va)
            score(name, predict(params, te.X))
            res.selection[name] = selection_metrics(global_importance(params).flat(), mask)
        elif name == "oracle":
            score(name, baselines.sov_oracle_predict_normalized(te))
        else:
            models = baselines.fit_stagewise(name, tr, va)
            score(name, baselines.predict_stagewise(models, te.X))
            # importance from the last-stage models, which see every input
            res.selection[name] = selection_metrics(np.concatenate(baselines.coefficient_importance(models, tr.nx, True)), mask)
            res.selection[name + "_all"] = selection_metrics(np.concatenate(baselines.coefficient_importance(models, tr.nx)), mask)
        res.seconds[name] = time.perf_counter() - t0
        log.info("case %d seed %d %s: rmse %.4f (%.1fs)", case_id, seed, name, res.mean(name), res.seconds[name])
    return res


def summarize(results, methods=METHODS):
    """Mean and standard deviation across seeds of each method's mean relative RMSE."""
    out = {}
    for m in methods:
        vals = np.array([r.mean(m) for r in results if m in r.rmse])
        if vals.size:
            out[m] = (float(vals.mean()), float(vals.std()))
    return out
