"""Block-coordinate stochastic proximal gradient training.

One iteration on a mini-batch:

1. forward pass at the current parameters;
2. outliers ``a = S_{gamma/2}(y - yhat)`` (all zero for the SSE loss);
3. gradient of the outlier-adjusted squared error ``sum (y - yhat - a)^2``;
4. proximal group-lasso step on every column of every ``Wx[k]``;
5. plain gradient step (with L2 decay) on all other parameters.

Steps 4 and 5 reuse the single gradient from step 3.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from dmmtl.diagnostics import mean_relative_rmse
from dmmtl.errors import DivergenceError
from dmmtl.gradients import backward
from dmmtl.losses import full_objective, optimal_outliers
from dmmtl.model import forward, init_params
from dmmtl.rng import substream
from dmmtl.tensor import soft_threshold_columns, soft_threshold_scalar

log = logging.getLogger(__name__)


def update_outliers(residuals, gamma, loss_kind="huber"):
    """Closed-form outliers ``S_{gamma/2}(r)`` for every residual; zeros under SSE."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if loss_kind == "sse":
        return [np.zeros_like(np.asarray(r, dtype=np.float64)) for r in residuals]
    return [np.asarray(soft_threshold_scalar(np.asarray(r, dtype=np.float64), gamma / 2.0)) for r in residuals]


def prox_update_wx(wx, grads, config):
    """Proximal step on the input weight columns.

    For each column ``w`` with gradient ``g`` and ``L = 1/prox_step``::

        w <- S_{lambda_x/(L+lam)}( L/(L+lam) * (w - g/L) )

    where ``S`` shrinks the Euclidean norm of the column.  Columns that land
    inside the threshold come out as exact zeros.
    """
    L = 1.0 / config.prox_step
    shrink = L / (L + config.lam)
    thresh = config.lambda_x / (L + config.lam)
    out = []
    for w, g in zip(wx, grads):
        u = shrink * (np.asarray(w) - np.asarray(g) / L)
        out.append(soft_threshold_columns(u, thresh))
    return out


def sgd_step(params, grads, c, lam=0.0):
    """Gradient step on every parameter except ``Wx``: ``theta <- theta - c*(g + lam*theta)``."""
    if c <= 0:
        raise ValueError("step size must be positive")
    stepped = params.map(lambda t, g: t - c * (g + lam * t), grads)
    return stepped.with_wx(params.Wx)


def train_iteration(params, x_batch, y_batch, config, prox_step=None, sgd_step_size=None):
    """One block-coordinate sweep on a batch.  Returns ``(new_params, outliers)``."""
    if prox_step is not None:
        config = config.replace(prox_step=prox_step)
    c = config.sgd_step if sgd_step_size is None else sgd_step_size
    trace = forward(params, x_batch, y_batch)
    n = trace.n_samples
    res = [np.asarray(y) - yh for y, yh in zip(_as2d(y_batch), trace.yhat)]
    a = update_outliers(res, config.gamma, config.loss_kind)
    grads = backward(params, trace, [-2.0 * (r - ak) / n for r, ak in zip(res, a)])
    new_wx = prox_update_wx(params.Wx, grads.Wx, config)
    return sgd_step(params, grads, c, config.lam).with_wx(new_wx), a


def _as2d(seq):
    return [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in seq]


@dataclass
class TrainReport:
    objective: List[float] = field(default_factory=list)
    val_rmse: List[float] = field(default_factory=list)
    restarts: int = 0
    start_epoch: int = 0
    best_epoch: Optional[int] = None
    prox_step: float = 0.0
    sgd_step: float = 0.0
    checkpoint: Optional[str] = None

    @property
    def epochs_run(self):
        return len(self.objective)

    def records(self):
        """Per-epoch log records with absolute epoch numbers (1-based)."""
        for i, (obj, v) in enumerate(zip(self.objective, self.val_rmse)):
            yield {"epoch": self.start_epoch + i + 1, "objective": obj, "val_rmse": v}


def train(dataset, topology, config, val=None, init=None, start_epoch=0, callback=None):
    """Fit the stage-chain model with mini-batch proximal gradient.

    Parameters
    ----------
    dataset : Dataset
        Training split (normalised).
    topology : StageTopology
        Must agree with the dataset's stage widths.
    config : TrainConfig
    val : Dataset, optional
        Validation split; drives restarts and best-epoch selection.
    init : ParameterSet, optional
        Starting point (e.g. a resumed checkpoint).  Defaults to
        ``init_params(topology, config.seed)``.
    start_epoch : int
        Offset for epoch numbering in the report and callbacks.
    callback : callable, optional
        Called with each epoch's log record.

    Returns
    -------
    (ParameterSet, TrainReport)
    """
    n = dataset.n_samples
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if tuple(topology.nx) != tuple(dataset.topology.nx) or tuple(topology.ny) != tuple(dataset.topology.ny):
        raise ValueError("topology stage widths do not match the dataset")
    X, Y = dataset.X, dataset.Y
    y_mean = [y.mean(axis=0) for y in Y]
    shuffle_rng = substream(config.seed, "shuffle")
    params = init if init is not None else init_params(topology, config.seed)
    prox, c = config.prox_step, config.sgd_step
    report = TrainReport(start_epoch=start_epoch)
    best_val, best_params, stale = math.inf, params, 0
    prev_obj = math.inf
    n_batches = -(-n // config.batch_size)

    for epoch in range(start_epoch + 1, start_epoch + config.epochs + 1):
        order = shuffle_rng.permutation(n)
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            params, _ = train_iteration(
                params, [x[idx] for x in X], [y[idx] for y in Y], config, prox_step=prox, sgd_step_size=c
            )
        obj = full_objective(params, X, Y, config)
        if not np.isfinite(obj) or not params.is_finite():
            raise DivergenceError(epoch)
        v = math.nan
        if val is not None:
            v = mean_relative_rmse(val.Y, forward(params, val.X).yhat, y_mean)
        report.objective.append(obj)
        report.val_rmse.append(v)
        if callback is not None:
            callback({"epoch": epoch, "objective": obj, "val_rmse": v})
        log.debug("epoch %d objective %.6g val_rmse %.4g", epoch, obj, v)

        if config.backtrack and obj > prev_obj:
            prox, c = prox / 2.0, c / 2.0
        prev_obj = obj

        if val is None:
            continue
        if v < best_val:
            best_val, best_params, stale = v, params, 0
            report.best_epoch = epoch
            continue
        stale += 1
        if stale >= config.restart_patience and v > 1.0 and report.restarts < config.max_restarts:
            report.restarts += 1
            log.info("restarting at epoch %d (val_rmse %.4g)", epoch, v)
            params = init_params(topology, _restart_seed(config.seed, report.restarts))
            stale, prev_obj = 0, math.inf

    report.prox_step, report.sgd_step = prox, c
    if val is not None and config.keep_best and report.best_epoch is not None:
        return best_params, report
    return params, report


def _restart_seed(seed, attempt):
    return int(substream(seed, "restart", attempt).integers(0, 2**31 - 1))
