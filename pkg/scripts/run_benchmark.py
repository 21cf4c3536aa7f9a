"""Simulation benchmark: DMMTL against MEN, EN, ridge and the SoV oracle.

    python scripts/run_benchmark.py --cases 1 2 3 --seeds 5 --out results/benchmark

Writes one row per (case, seed, method) to ``runs.csv``, per-stage means to
``stages.csv`` and a case-level summary to ``summary.csv``.
"""

import argparse
import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

import numpy as np

from dmmtl.benchmark import BENCH_NH, BENCH_TRAIN, METHODS, run_case


@dataclass
class BenchmarkConfig:
    cases: Tuple[int, ...] = (1, 2, 3)
    seeds: int = 5
    n_samples: int = 2000
    nh: int = BENCH_NH
    epochs: int = BENCH_TRAIN.epochs
    methods: Tuple[str, ...] = METHODS
    out: Path = field(default_factory=lambda: Path("results/benchmark"))


def run(cfg):
    cfg.out.mkdir(parents=True, exist_ok=True)
    train_cfg = BENCH_TRAIN.replace(epochs=cfg.epochs)
    results = []
    t0 = time.perf_counter()
    for case in cfg.cases:
        for seed in range(cfg.seeds):
            results.append(run_case(case, seed, cfg.n_samples, config=train_cfg, nh=cfg.nh, methods=cfg.methods))
    elapsed = time.perf_counter() - t0

    with open(cfg.out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "seed", "method", "mean_rmse", "precision", "recall", "auc", "seconds"])
        for r in results:
            for m in r.rmse:
                p, rc, a = r.selection.get(m, (np.nan, np.nan, np.nan))
                w.writerow([r.case_id, r.seed, m, r.mean(m), p, rc, a, round(r.seconds[m], 2)])
            for m in r.selection:
                if m.endswith("_all"):
                    p, rc, a = r.selection[m]
                    w.writerow([r.case_id, r.seed, m, "", p, rc, a, ""])

    with open(cfg.out / "stages.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "method", "stage", "mean_rmse"])
        for case in cfg.cases:
            rs = [r for r in results if r.case_id == case]
            for m in cfg.methods:
                prof = np.mean([r.stage_means(m) for r in rs], axis=0)
                for k, v in enumerate(prof):
                    w.writerow([case, m, k + 1, v])

    with open(cfg.out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "method", "rmse_mean", "rmse_std", "auc_mean"])
        for case in cfg.cases:
            rs = [r for r in results if r.case_id == case]
            for m in cfg.methods:
                v = np.array([r.mean(m) for r in rs])
                auc = np.mean([r.selection[m][2] for r in rs]) if m in rs[0].selection else np.nan
                w.writerow([case, m, v.mean(), v.std(), auc])
                print(f"case {case} {m:7s} rmse {v.mean():.3f} ({v.std():.3f})" + ("" if np.isnan(auc) else f"  auc {auc:.3f}"))
    print(f"{len(results)} runs in {elapsed / 60:.1f} min; tables in {cfg.out}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--cases", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--nh", type=int, default=BENCH_NH)
    p.add_argument("--epochs", type=int, default=BENCH_TRAIN.epochs)
    p.add_argument("--methods", nargs="+", default=list(METHODS))
    p.add_argument("--out", type=Path, default=Path("results/benchmark"))
    p.add_argument("-v", "--verbose", action="store_true")
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(message)s")
    run(BenchmarkConfig(tuple(a.cases), a.seeds, a.n_samples, a.nh, a.epochs, tuple(a.methods), a.out))


if __name__ == "__main__":
    main()
