"""Prediction metrics, variable-selection scoring and importance reports."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from dmmtl.gradients import input_gradient
from dmmtl.model import as_batch, forward
from dmmtl.tensor import SIGMOID

UNDEFINED = float("nan")


def relative_rmse(y_test, y_pred, y_train_mean):
    """Per-output relative error, one array per stage.

    For each output, the test SSE of the predictions divided by the test SSE
    of the constant training-mean predictor.  Outputs whose denominator is
    zero are reported as NaN.
    """
    out = []
    for y, yh, m in zip(y_test, y_pred, y_train_mean):
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        yh = np.atleast_2d(np.asarray(yh, dtype=np.float64))
        if y.shape != yh.shape:
            raise ValueError(f"prediction shape {yh.shape} does not match target shape {y.shape}")
        num = np.sum((y - yh) ** 2, axis=0)
        den = np.sum((y - np.asarray(m, dtype=np.float64)) ** 2, axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(den > 0, num / np.where(den > 0, den, 1.0), UNDEFINED)
        out.append(r)
    return out


def defined_values(per_stage):
    vals = np.concatenate([np.asarray(r, dtype=np.float64).ravel() for r in per_stage]) if per_stage else np.array([])
    return vals[np.isfinite(vals)]


def mean_relative_rmse(y_test, y_pred, y_train_mean):
    vals = defined_values(relative_rmse(y_test, y_pred, y_train_mean))
    return float(vals.mean()) if vals.size else UNDEFINED


def rmse_quantiles(values, levels):
    """Empirical quantiles with linear interpolation; undefined entries are ignored."""
    vals = np.asarray(values, dtype=np.float64).ravel()
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        raise ValueError("no defined RMSE values")
    levels = np.asarray(levels, dtype=np.float64)
    if np.any((levels <= 0) | (levels >= 1)):
        raise ValueError("quantile levels must lie strictly between 0 and 1")
    return np.quantile(vals, levels)


@dataclass
class MetricsReport:
    per_output: List[np.ndarray]
    levels: Tuple[float, ...] = (0.2, 0.4, 0.5, 0.7)
    quantiles: Optional[np.ndarray] = None
    thresholds: Optional[np.ndarray] = None
    counts_below: Optional[np.ndarray] = None

    @property
    def mean(self):
        v = defined_values(self.per_output)
        return float(v.mean()) if v.size else UNDEFINED

    def stage_means(self):
        return np.array([np.nanmean(r) if np.any(np.isfinite(r)) else UNDEFINED for r in self.per_output])


def metrics_report(y_test, y_pred, y_train_mean, levels=(0.2, 0.4, 0.5, 0.7), thresholds=None):
    per = relative_rmse(y_test, y_pred, y_train_mean)
    vals = defined_values(per)
    rep = MetricsReport(per, tuple(levels))
    if vals.size:
        rep.quantiles = rmse_quantiles(vals, levels)
    if thresholds is not None:
        rep.thresholds = np.asarray(thresholds, dtype=np.float64)
        rep.counts_below = np.array([int(np.sum(vals < t)) for t in rep.thresholds])
    return rep


def threshold_sweep(start=0.05, stop=0.95, step=0.05):
    n = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(n), 10)


# ----------------------------------------------------------------------------
# variable selection


def auc(scores, truth):
    """Mann-Whitney AUC of important (``truth`` True) against unimportant scores.

    Ties count one half.  NaN when either class is empty.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=bool).ravel()
    n_pos, n_neg = int(t.sum()), int((~t).sum())
    if n_pos == 0 or n_neg == 0:
        return UNDEFINED
    ranks = rankdata(s)
    return float((ranks[t].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def selection_threshold(scores, truth, fpr=0.05):
    """Smallest cutoff whose false positive rate among unimportant inputs is at most ``fpr``.

    An input is declared important when its score is ``>=`` the cutoff.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=bool).ravel()
    neg = s[~t]
    for c in np.unique(s):
        if np.mean(neg >= c) <= fpr:
            return float(c)
    return float(np.inf)


def selection_metrics(scores, truth, fpr=0.05):
    """``(precision, recall, auc)`` at the cutoff from :func:`selection_threshold`."""
    if not 0 < fpr < 1:
        raise ValueError("fpr must lie strictly between 0 and 1")
    s = np.asarray(scores, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=bool).ravel()
    if s.shape != t.shape:
        raise ValueError("scores and mask are not aligned")
    a = auc(s, t)
    if t.all() or not t.any():
        return UNDEFINED, UNDEFINED, a
    cut = selection_threshold(s, t, fpr)
    picked = s >= cut
    tp = int(np.sum(picked & t))
    fp = int(np.sum(picked & ~t))
    fn = int(np.sum(~picked & t))
    precision = tp / (tp + fp) if tp + fp else UNDEFINED
    recall = tp / (tp + fn)
    return precision, recall, a


# ----------------------------------------------------------------------------
# importance


@dataclass
class ImportanceReport:
    scores: List[np.ndarray]  # one array per stage, length nx[k]
    kind: str = "global"
    target: Optional[Tuple[int, int]] = None
    samples: Optional[Sequence[int]] = None
    threshold: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def flat(self):
        return np.concatenate(self.scores)

    def top(self, m=3):
        """The ``m`` highest-scoring ``(stage, input, score)`` triples, best first."""
        entries = [(k, i, float(v)) for k, s in enumerate(self.scores) for i, v in enumerate(s)]
        entries.sort(key=lambda e: (-e[2], e[0], e[1]))
        return entries[:m]


def global_importance(params):
    """Euclidean norm of each input's weight column, per stage."""
    topo = params.topology
    return ImportanceReport([np.linalg.norm(params.Wx[k][:, : topo.nx[k]], axis=0) for k in range(topo.K)])


def local_importance(params, x_seq, target, samples=None, y_seq=None, activation=SIGMOID):
    """Mean squared sensitivity of output ``target = (p, q)`` to every input.

    ``samples`` optionally restricts the average to the given row indices
    (e.g. defective parts, or a window of input values).
    """
    topo = params.topology
    xs, _ = as_batch(x_seq, topo.nx)
    ys = None
    if y_seq is not None:
        ys, _ = as_batch(y_seq, topo.ny, what="y")
    if samples is not None:
        idx = np.asarray(list(samples), dtype=int)
        if idx.size == 0:
            raise ValueError("empty sample set")
        xs = [x[idx] for x in xs]
        ys = None if ys is None else [y[idx] for y in ys]
    if xs[0].shape[0] == 0:
        raise ValueError("empty sample set")
    trace = forward(params, xs, ys, activation=activation)
    grads = input_gradient(params, trace, target)
    return ImportanceReport(
        [np.mean(g * g, axis=0) for g in grads],
        kind="local",
        target=tuple(target),
        samples=None if samples is None else list(samples),
    )
