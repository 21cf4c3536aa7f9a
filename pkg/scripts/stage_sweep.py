"""Tuning sweep for DMMTL on one simulated case, scored on the validation split.

    python scripts/stage_sweep.py --case 3 --seed 100 --nh 20 40 60 --lambda-x 0.01 0.03 0.1

Each grid point trains once; the table goes to stdout and ``--out`` (CSV).
Use a seed outside the benchmark seeds so that tuning never sees test data
of the reported runs.
"""

import argparse
import csv
import itertools
import sys
import time
from dataclasses import dataclass
from typing import Tuple

from dmmtl.benchmark import BENCH_TRAIN
from dmmtl.data import GeneratorSpec, generate, split
from dmmtl.diagnostics import mean_relative_rmse
from dmmtl.model import predict
from dmmtl.optimizer import train


@dataclass
class SweepConfig:
    case: int = 1
    seed: int = 100
    n_samples: int = 2000
    nh: Tuple[int, ...] = (40,)
    lambda_x: Tuple[float, ...] = (BENCH_TRAIN.lambda_x,)
    lam: Tuple[float, ...] = (BENCH_TRAIN.lam,)
    batch_size: Tuple[int, ...] = (BENCH_TRAIN.batch_size,)
    epochs: int = BENCH_TRAIN.epochs


def sweep(cfg, out=None):
    d = generate(GeneratorSpec(case_id=cfg.case, n_samples=cfg.n_samples, seed=cfg.seed))
    tr, va, _ = split(d, seed=cfg.seed)
    y_mean = [y.mean(axis=0) for y in tr.Y]
    writer = csv.writer(out or sys.stdout, lineterminator="\n")
    writer.writerow(["nh", "lambda_x", "lam", "batch_size", "val_rmse", "best_epoch", "seconds"])
    for nh, lx, lam, bs in itertools.product(cfg.nh, cfg.lambda_x, cfg.lam, cfg.batch_size):
        t0 = time.perf_counter()
        tc = BENCH_TRAIN.replace(lambda_x=lx, lam=lam, batch_size=bs, epochs=cfg.epochs, seed=cfg.seed)
        params, rep = train(tr, tr.stage_topology(nh), tc, val=va)
        v = mean_relative_rmse(va.Y, predict(params, va.X), y_mean)
        writer.writerow([nh, lx, lam, bs, round(v, 5), rep.best_epoch, round(time.perf_counter() - t0, 1)])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--case", type=int, default=1)
    p.add_argument("--seed", type=int, default=100)
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--nh", type=int, nargs="+", default=[40])
    p.add_argument("--lambda-x", type=float, nargs="+", default=[BENCH_TRAIN.lambda_x])
    p.add_argument("--lam", type=float, nargs="+", default=[BENCH_TRAIN.lam])
    p.add_argument("--batch-size", type=int, nargs="+", default=[BENCH_TRAIN.batch_size])
    p.add_argument("--epochs", type=int, default=BENCH_TRAIN.epochs)
    p.add_argument("--out", help="CSV file for the table")
    a = p.parse_args()
    cfg = SweepConfig(a.case, a.seed, a.n_samples, tuple(a.nh), tuple(a.lambda_x), tuple(a.lam), tuple(a.batch_size), a.epochs)
    if a.out:
        with open(a.out, "w", newline="") as fh:
            sweep(cfg, fh)
    else:
        sweep(cfg)


if __name__ == "__main__":
    main()
