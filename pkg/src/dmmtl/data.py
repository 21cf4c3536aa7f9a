"""Synthetic multistage benchmarks, normalisation, splitting and CSV ingestion.

The generators simulate a K-stage line whose latent state follows a linear
recursion::

    h_k = Wx_k x_k + Uh_k h_{k-lag} + b_k,     y_k = Wy_k h_k + noise

with ``h_j = 0`` for ``j <= 0``.  Case 1 is one chain (lag 1), case 2 runs
three independent chains side by side on disjoint input/output groups, and
case 3 uses lag 3 so that stages {1,4,7}, {2,5,8}, {3,6,9} form separate
lines.  Unimportant inputs are the trailing inputs of each stage (of each
group in case 2); their weight columns are zero.

Stages are 0-based in code and 1-based in every file format.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.linalg import block_diag

from dmmtl.errors import DataError
from dmmtl.model import StageTopology
from dmmtl.rng import substream

log = logging.getLogger(__name__)

TRUTH_FORMAT = "dmmtl-truth/1"


@dataclass(frozen=True)
class GeneratorSpec:
    case_id: int = 1
    K: int = 9
    nx: int = 90
    ny: int = 6
    nh_true: int = 5
    sigma: float = 0.5
    n_unimportant: Optional[int] = None  # per stage; per group in case 2. None -> 15 (5 per group in case 2)
    groups: int = 3
    lag: int = 3
    n_samples: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.case_id not in (1, 2, 3):
            raise ValueError(f"case_id must be 1, 2 or 3, got {self.case_id}")
        if min(self.K, self.nx, self.ny, self.nh_true, self.n_samples) < 1:
            raise ValueError("dimensions and sample count must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.case_id == 2:
            if self.groups < 1 or self.nx % self.groups or self.ny % self.groups:
                raise ValueError("case 2 needs nx and ny divisible by the number of groups")
            if self.unimportant >= self.nx // self.groups:
                raise ValueError("n_unimportant must be smaller than the group width")
        elif self.unimportant >= self.nx:
            raise ValueError("n_unimportant must be smaller than nx")
        if self.unimportant < 0:
            raise ValueError("n_unimportant must be non-negative")
        if self.case_id == 3 and self.lag < 1:
            raise ValueError("lag must be >= 1")

    @property
    def unimportant(self):
        if self.n_unimportant is not None:
            return self.n_unimportant
        return 5 if self.case_id == 2 else 15


@dataclass
class Truth:
    """Generator matrices and importance mask (``mask[k][i]`` True = influential)."""

    Wx: List[np.ndarray]
    Uh: List[np.ndarray]
    b: List[np.ndarray]
    Wy: List[np.ndarray]
    lag: int
    mask: List[np.ndarray]
    case_id: int = 0

    @property
    def K(self):
        return len(self.Wx)


@dataclass
class NormStats:
    x_mean: List[np.ndarray]
    x_std: List[np.ndarray]
    y_mean: List[np.ndarray]
    y_std: List[np.ndarray]
    flagged: List[tuple] = field(default_factory=list)  # (role, stage, index) with zero variance


@dataclass
class Dataset:
    X: List[np.ndarray]
    Y: List[np.ndarray]
    x_names: Optional[List[List[str]]] = None
    y_names: Optional[List[List[str]]] = None
    ids: Optional[np.ndarray] = None
    stats: Optional[NormStats] = None
    truth: Optional[Truth] = None

    def __post_init__(self):
        self.X = [np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in self.X]
        self.Y = [np.atleast_2d(np.asarray(y, dtype=np.float64)) for y in self.Y]
        if len(self.X) != len(self.Y):
            raise DataError("X and Y must have the same number of stages")
        n = self.X[0].shape[0]
        if any(a.shape[0] != n for a in self.X + self.Y):
            raise DataError("every stage must carry the same number of samples")
        if self.x_names is None:
            self.x_names = [[f"x{k + 1}_{i + 1}" for i in range(x.shape[1])] for k, x in enumerate(self.X)]
        if self.y_names is None:
            self.y_names = [[f"y{k + 1}_{j + 1}" for j in range(y.shape[1])] for k, y in enumerate(self.Y)]
        if self.ids is None:
            self.ids = np.arange(n)

    @property
    def K(self):
        return len(self.X)

    @property
    def n_samples(self):
        return self.X[0].shape[0]

    @property
    def nx(self):
        return tuple(x.shape[1] for x in self.X)

    @property
    def ny(self):
        return tuple(y.shape[1] for y in self.Y)

    @property
    def normalized(self):
        return self.stats is not None

    @property
    def topology(self):
        """Stage widths as a topology (hidden width 1; use :meth:`stage_topology` to choose it)."""
        return self.stage_topology(1)

    def stage_topology(self, nh, D1=1, D2=1, feed_prev_outputs=False):
        return StageTopology(self.K, self.nx, self.ny, nh, D1, D2, feed_prev_outputs)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return replace(self, X=[x[idx] for x in self.X], Y=[y[idx] for y in self.Y], ids=self.ids[idx])

    def equals(self, other, tol=0.0):
        if self.nx != other.nx or self.ny != other.ny or self.n_samples != other.n_samples:
            return False
        if self.x_names != other.x_names or self.y_names != other.y_names:
            return False
        return all(np.allclose(a, b, rtol=0, atol=tol) for a, b in zip(self.X + self.Y, other.X + other.Y))


# ----------------------------------------------------------------------------
# generators


def _rows_times(X, W):
    """``X @ W.T`` with a per-row summation order that does not depend on the row count.

    BLAS products may round differently for different batch shapes; the
    generator and the oracle must agree bit for bit on any subset of rows.
    """
    return np.sum(X[:, None, :] * W[None, :, :], axis=2)


def latent_outputs(truth, X):
    """Noise-free outputs of the true linear recursion for inputs ``X`` (list of ``(N, nx_k)``)."""
    hs = []
    ys = []
    for k in range(truth.K):
        h = _rows_times(X[k], truth.Wx[k]) + truth.b[k]
        if k - truth.lag >= 0:
            h = h + _rows_times(hs[k - truth.lag], truth.Uh[k])
        hs.append(h)
        ys.append(_rows_times(h, truth.Wy[k]))
    return ys


def _chain_params(rng, K, nx, ny, nh, n_unimp):
    Wx, Uh, b, Wy, mask = [], [], [], [], []
    for _ in range(K):
        w = rng.normal(0.0, 1.0 / math.sqrt(nx), size=(nh, nx))
        if n_unimp:
            w[:, nx - n_unimp :] = 0.0
        Wx.append(w)
        Uh.append(rng.normal(0.0, 1.0 / math.sqrt(nh), size=(nh, nh)))
        b.append(rng.normal(0.0, 1.0 / math.sqrt(nh), size=nh))
        Wy.append(rng.normal(0.0, 1.0 / math.sqrt(nh), size=(ny, nh)))
        m = np.ones(nx, dtype=bool)
        m[nx - n_unimp :] = False
        mask.append(m)
    return Wx, Uh, b, Wy, mask


def _sample(spec, truth):
    rng = substream(spec.seed, "generator-samples")
    X = [rng.normal(size=(spec.n_samples, spec.nx)) for _ in range(spec.K)]
    clean = latent_outputs(truth, X)
    Y = [y + spec.sigma * rng.normal(size=y.shape) for y in clean]
    return Dataset(X, Y, truth=truth)


def generate_case1(spec):
    """One chain through all stages (lag 1)."""
    rng = substream(spec.seed, "generator-params")
    Wx, Uh, b, Wy, mask = _chain_params(rng, spec.K, spec.nx, spec.ny, spec.nh_true, spec.unimportant)
    return _sample(spec, Truth(Wx, Uh, b, Wy, 1, mask, case_id=1))


def generate_case2(spec):
    """Independent chains on ``groups`` disjoint blocks of inputs and outputs."""
    rng = substream(spec.seed, "generator-params")
    g = spec.groups
    per = [
        _chain_params(rng, spec.K, spec.nx // g, spec.ny // g, spec.nh_true, spec.unimportant) for _ in range(g)
    ]
    Wx, Uh, b, Wy, mask = [], [], [], [], []
    for k in range(spec.K):
        Wx.append(block_diag(*[p[0][k] for p in per]))
        Uh.append(block_diag(*[p[1][k] for p in per]))
        b.append(np.concatenate([p[2][k] for p in per]))
        Wy.append(block_diag(*[p[3][k] for p in per]))
        mask.append(np.concatenate([p[4][k] for p in per]))
    return _sample(spec, Truth(Wx, Uh, b, Wy, 1, mask, case_id=2))


def generate_case3(spec):
    """Lagged recursion: stage k depends on stage k - lag only."""
    rng = substream(spec.seed, "generator-params")
    Wx, Uh, b, Wy, mask = _chain_params(rng, spec.K, spec.nx, spec.ny, spec.nh_true, spec.unimportant)
    return _sample(spec, Truth(Wx, Uh, b, Wy, spec.lag, mask, case_id=3))


def generate(spec):
    return {1: generate_case1, 2: generate_case2, 3: generate_case3}[spec.case_id](spec)


# ----------------------------------------------------------------------------
# normalisation and splitting


def fit_stats(dataset):
    flagged = []

    def col_stats(arrs, role):
        means, stds = [], []
        for k, a in enumerate(arrs):
            m = a.mean(axis=0)
            s = a.std(axis=0)
            for i in np.flatnonzero(s == 0):
                flagged.append((role, k, int(i)))
            means.append(m)
            stds.append(np.where(s == 0, 1.0, s))
        return means, stds

    xm, xs = col_stats(dataset.X, "input")
    ym, ys = col_stats(dataset.Y, "output")
    for role, k, i in flagged:
        log.warning("%s %d of stage %d has zero variance; centred only", role, i + 1, k + 1)
    return NormStats(xm, xs, ym, ys, flagged)


def normalize(dataset, stats=None):
    """Z-score every variable.  Statistics default to the dataset's own."""
    if dataset.normalized:
        raise DataError("dataset is already normalised")
    stats = fit_stats(dataset) if stats is None else stats
    X = [(x - m) / s for x, m, s in zip(dataset.X, stats.x_mean, stats.x_std)]
    Y = [(y - m) / s for y, m, s in zip(dataset.Y, stats.y_mean, stats.y_std)]
    return replace(dataset, X=X, Y=Y, stats=stats)


def denormalize(dataset):
    if not dataset.normalized:
        return dataset
    st = dataset.stats
    X = [x * s + m for x, m, s in zip(dataset.X, st.x_mean, st.x_std)]
    Y = [y * s + m for y, m, s in zip(dataset.Y, st.y_mean, st.y_std)]
    return replace(dataset, X=X, Y=Y, stats=None)


def denormalize_outputs(pred, stats):
    return [y * s + m for y, m, s in zip(pred, stats.y_mean, stats.y_std)]


def normalize_inputs(X, stats):
    return [(x - m) / s for x, m, s in zip(X, stats.x_mean, stats.x_std)]


def split_sizes(n, fractions):
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n_train = int(round(fr[0] * n))
    n_val = int(round(fr[1] * n))
    sizes = (n_train, n_val, n - n_train - n_val)
    if min(sizes) <= 0:
        raise ValueError(f"split of {n} samples by {tuple(fractions)} leaves an empty part")
    return sizes


def split(dataset, fractions=(0.6, 0.2, 0.2), seed=0, normalize_splits=True):
    """Shuffled train/validation/test partition.

    With ``normalize_splits`` all three parts are z-scored with statistics
    of the training part.
    """
    n_train, n_val, _ = split_sizes(dataset.n_samples, fractions)
    perm = substream(seed, "split").permutation(dataset.n_samples)
    parts = [perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]]
    train, val, test = (dataset.subset(np.sort(p)) for p in parts)
    if normalize_splits:
        stats = fit_stats(train)
        train, val, test = (normalize(d, stats) for d in (train, val, test))
    return train, val, test


# ----------------------------------------------------------------------------
# CSV + manifest


def save_csv(dataset, data_path, manifest_path, truth_path=None):
    """Write samples as CSV plus a column manifest (and optionally the truth sidecar)."""
    data_path, manifest_path = Path(data_path), Path(manifest_path)
    names = []
    with open(manifest_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "stage", "role"])
        for k in range(dataset.K):
            for nm in dataset.x_names[k]:
                w.writerow([nm, k + 1, "input"])
                names.append(nm)
            for nm in dataset.y_names[k]:
                w.writerow([nm, k + 1, "output"])
                names.append(nm)
    cols = []
    for k in range(dataset.K):
        cols.append(dataset.X[k])
        cols.append(dataset.Y[k])
    table = np.concatenate(cols, axis=1)
    with open(data_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in table:
            w.writerow([repr(float(v)) for v in row])
    if truth_path is not None and dataset.truth is not None:
        save_truth(dataset.truth, truth_path)


def _read_manifest(path):
    entries = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"name", "stage", "role"} - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: manifest header lacks {sorted(missing)}")
        for line, rec in enumerate(reader, start=2):
            name = rec["name"]
            try:
                stage = int(rec["stage"])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{line}: stage {rec['stage']!r} is not an integer") from None
            role = rec["role"]
            if stage < 1:
                raise DataError(f"{path}:{line}: stage must be >= 1")
            if role not in ("input", "output"):
                raise DataError(f"{path}:{line}: role must be 'input' or 'output', got {role!r}")
            if name in entries:
                raise DataError(f"{path}:{line}: column {name!r} declared twice")
            entries[name] = (stage, role)
    if not entries:
        raise DataError(f"{path}: manifest is empty")
    return entries


def load_csv(manifest_path, data_path, truth_path=None):
    """Read a dataset from a manifest and a data file.

    Within each stage, inputs and outputs keep the order in which they appear
    in the data file.  The stage count is the largest stage in the manifest.
    """
    manifest = _read_manifest(manifest_path)
    with open(data_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{data_path}: file is empty") from None
        for col, name in enumerate(header, start=1):
            if name not in manifest:
                raise DataError(f"{data_path}: column {col} {name!r} is not in the manifest")
        absent = [n for n in manifest if n not in header]
        if absent:
            raise DataError(f"{data_path}: manifest columns missing from data: {absent}")
        rows = []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{data_path}:{line}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for col, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{data_path}:{line}: column {header[col]!r} has non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{data_path}:{line}: column {header[col]!r} is not finite")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{data_path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    K = max(stage for stage, _ in manifest.values())
    xi = [[] for _ in range(K)]
    yi = [[] for _ in range(K)]
    for col, name in enumerate(header):
        stage, role = manifest[name]
        (xi if role == "input" else yi)[stage - 1].append(col)
    X = [table[:, idx] for idx in xi]
    Y = [table[:, idx] for idx in yi]
    x_names = [[header[c] for c in idx] for idx in xi]
    y_names = [[header[c] for c in idx] for idx in yi]
    truth = load_truth(truth_path) if truth_path is not None else None
    return Dataset(X, Y, x_names, y_names, truth=truth)


def save_truth(truth, path):
    doc = {
        "format": TRUTH_FORMAT,
        "case_id": truth.case_id,
        "lag": truth.lag,
        "masked": [[k + 1, int(i) + 1] for k, m in enumerate(truth.mask) for i in np.flatnonzero(~m)],
        "n_inputs": [int(m.size) for m in truth.mask],
        "Wx": [w.tolist() for w in truth.Wx],
        "Uh": [u.tolist() for u in truth.Uh],
        "b": [v.tolist() for v in truth.b],
        "Wy": [w.tolist() for w in truth.Wy],
    }
    Path(path).write_text(json.dumps(doc))


def load_truth(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != TRUTH_FORMAT:
        raise DataError(f"{path}: not a truth file (format {doc.get('format')!r})")
    mask = [np.ones(n, dtype=bool) for n in doc["n_inputs"]]
    for k, i in doc["masked"]:
        mask[k - 1][i - 1] = False

    def arrs(key):
        return [np.array(a, dtype=np.float64).reshape(len(a), -1) if key != "b" else np.array(a) for a in doc[key]]

    return Truth(arrs("Wx"), arrs("Uh"), arrs("b"), arrs("Wy"), doc["lag"], mask, doc.get("case_id", 0))
