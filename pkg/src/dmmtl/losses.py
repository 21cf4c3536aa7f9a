"""Losses, penalties and the training objective.

The robust objective is handled through an explicit outlier term: for each
sample, stage and output, the data cost is ``(y - yhat - a)^2 + gamma*|a|``.
Minimising over ``a`` gives back the Huber cost of the residual (see
:func:`huber`), which is why the optimizer can treat the outliers in closed
form.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np

from dmmtl.model import as_batch, forward
from dmmtl.tensor import soft_threshold_scalar

LOSS_KINDS = ("sse", "huber")


@dataclass(frozen=True)
class TrainConfig:
    lambda_x: float = 0.03  # group penalty on columns of Wx
    lam: float = 1e-3  # L2 penalty on all parameters, (lam/2)*||theta||^2
    gamma: float = 1.0  # Huber threshold scale; residuals beyond gamma/2 are outliers
    loss_kind: str = "sse"
    prox_step: float = 0.1  # 1/L
    sgd_step: float = 0.1  # c
    batch_size: int = 64
    epochs: int = 150
    seed: int = 0
    restart_patience: int = 10
    max_restarts: int = 2
    keep_best: bool = True
    backtrack: bool = True  # halve both steps whenever the epoch objective goes up

    def __post_init__(self):
        if self.lambda_x < 0 or self.lam < 0:
            raise ValueError("penalty weights must be non-negative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.prox_step <= 0 or self.sgd_step <= 0:
            raise ValueError("step sizes must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.restart_patience < 1 or self.max_restarts < 0:
            raise ValueError("restart_patience must be >= 1 and max_restarts >= 0")

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return TrainConfig(**d)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def sse_loss(e):
    e = np.asarray(e, dtype=np.float64)
    return float(np.sum(e * e))


def huber(e, gamma):
    """``e^2`` for ``|e| <= gamma/2``, else ``gamma*|e| - gamma^2/4``.  Vectorised."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    e = np.asarray(e, dtype=np.float64)
    ae = np.abs(e)
    out = np.where(ae <= gamma / 2.0, e * e, gamma * ae - gamma * gamma / 4.0)
    return float(out) if out.ndim == 0 else out


def huber_grad(e, gamma):
    """Derivative of :func:`huber`; at the kinks the two branches agree (value ``gamma*sgn(e)``)."""
    e = np.asarray(e, dtype=np.float64)
    return np.where(np.abs(e) <= gamma / 2.0, 2.0 * e, gamma * np.sign(e))


def group_penalty(params, lambda_x):
    """``lambda_x`` times the sum of Euclidean norms of every column of every ``Wx[k]``."""
    if lambda_x < 0:
        raise ValueError("lambda_x must be non-negative")
    return float(lambda_x * sum(np.linalg.norm(w, axis=0).sum() for w in params.Wx))


def l2_penalty(params, lam):
    return 0.5 * lam * params.sq_norm()


def outlier_cost(residuals, outliers, gamma):
    """Batch-averaged ``sum (r - a)^2 + gamma*|a|`` over stages and outputs."""
    n = residuals[0].shape[0]
    total = 0.0
    for r, a in zip(residuals, outliers):
        total += np.sum((r - a) ** 2) + gamma * np.sum(np.abs(a))
    return float(total / n)


def residuals(params, x_seq, y_seq, trace=None):
    """``y - yhat`` per stage, shaped ``(N, ny[k])``."""
    ys, _ = as_batch(y_seq, params.topology.ny, what="y")
    if trace is None:
        trace = forward(params, x_seq, ys)
    return [y - yh for y, yh in zip(ys, trace.yhat)]


def objective(params, x_seq, y_seq, config, outliers=None):
    """Outlier-decomposed objective.

    Data and outlier terms are averaged over the samples; the penalties are
    not.  ``outliers=None`` means all zeros.
    """
    res = residuals(params, x_seq, y_seq)
    if outliers is None:
        outliers = [np.zeros_like(r) for r in res]
    else:
        outliers = [np.broadcast_to(np.asarray(a, dtype=np.float64), r.shape) for a, r in zip(outliers, res)]
    return (
        outlier_cost(res, outliers, config.gamma)
        + group_penalty(params, config.lambda_x)
        + l2_penalty(params, config.lam)
    )


def data_loss(res, config):
    """Batch-averaged data cost with the outliers already minimised out."""
    n = res[0].shape[0]
    if config.loss_kind == "sse":
        return float(sum(np.sum(r * r) for r in res) / n)
    return float(sum(np.sum(huber(r, config.gamma)) for r in res) / n)


def full_objective(params, x_seq, y_seq, config):
    """Objective at the optimal outliers (equivalently: Huber or SSE data term plus penalties)."""
    res = residuals(params, x_seq, y_seq)
    return data_loss(res, config) + group_penalty(params, config.lambda_x) + l2_penalty(params, config.lam)


def optimal_outliers(res, config):
    if config.loss_kind == "sse":
        return [np.zeros_like(r) for r in res]
    return [soft_threshold_scalar(r, config.gamma / 2.0) for r in res]
