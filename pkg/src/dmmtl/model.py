"""Stage topology, parameters and the forward pass through the stage chain.

Each stage ``k`` owns a transition network mapping ``(h_{k-1}, x_k)`` to the
hidden state ``h_k`` and an emission network mapping ``h_k`` to the stage
outputs.  With one transition and one emission layer the model is::

    h_k   = sigmoid(Wx[k] x_k + Uh[k][0] h_{k-1} + bh[k][0])
    yhat_k = Vy[k][0] h_k + bg[k][0]

with ``h_0 = 0``.  Deeper stages stack ``sigmoid(U h + b)`` transition layers
after the first, and sigmoid emission layers before the linear head.

Samples are carried as the leading axis: ``x_seq[k]`` has shape
``(n_samples, nx_eff[k])``.  A 1-D array per stage is accepted as a single
sample.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from dmmtl.errors import ShapeError
from dmmtl.rng import substream
from dmmtl.tensor import SIGMOID, Activation


@dataclass(frozen=True)
class StageTopology:
    K: int
    nx: Tuple[int, ...]
    ny: Tuple[int, ...]
    nh: int
    D1: int = 1
    D2: int = 1
    feed_prev_outputs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "nx", tuple(int(v) for v in self.nx))
        object.__setattr__(self, "ny", tuple(int(v) for v in self.ny))
        if self.K < 1:
            raise ValueError("need at least one stage")
        if len(self.nx) != self.K or len(self.ny) != self.K:
            raise ValueError(f"nx and ny must have K={self.K} entries")
        if self.nh < 1 or self.D1 < 1 or self.D2 < 1:
            raise ValueError("nh, D1 and D2 must be >= 1")
        if min(self.nx) < 0 or min(self.ny) < 0:
            raise ValueError("stage widths must be non-negative")
        if sum(self.ny) == 0:
            raise ValueError("at least one stage must have outputs")

    def effective_nx(self, k):
        """Width of the stage-``k`` transition input (0-based ``k``)."""
        extra = self.ny[k - 1] if self.feed_prev_outputs and k > 0 else 0
        return self.nx[k] + extra

    def to_dict(self):
        return {
            "K": self.K,
            "nx": list(self.nx),
            "ny": list(self.ny),
            "nh": self.nh,
            "D1": self.D1,
            "D2": self.D2,
            "feed_prev_outputs": self.feed_prev_outputs,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ParameterSet:
    """All per-stage weights.

    ``Wx[k]`` is ``nh x nx_eff[k]``; its ``i``-th column is the weight group of
    input ``i`` at stage ``k``.  ``Uh[k][0]`` maps ``h_{k-1}`` into the first
    transition layer and ``Uh[k][d]`` (``d >= 1``) maps between transition
    layers.  ``Vy[k][-1]`` is the linear output head.
    """

    topology: StageTopology
    Wx: List[np.ndarray]
    Uh: List[List[np.ndarray]]
    bh: List[List[np.ndarray]]
    Vy: List[List[np.ndarray]]
    bg: List[List[np.ndarray]]

    def __post_init__(self):
        topo = self.topology
        nh = topo.nh
        for k in range(topo.K):
            _check(self.Wx[k], (nh, topo.effective_nx(k)), f"Wx[{k}]")
            if len(self.Uh[k]) != topo.D1 or len(self.bh[k]) != topo.D1:
                raise ShapeError(f"stage {k}: expected {topo.D1} transition layers")
            for d in range(topo.D1):
                _check(self.Uh[k][d], (nh, nh), f"Uh[{k}][{d}]")
                _check(self.bh[k][d], (nh,), f"bh[{k}][{d}]")
            if len(self.Vy[k]) != topo.D2 or len(self.bg[k]) != topo.D2:
                raise ShapeError(f"stage {k}: expected {topo.D2} emission layers")
            for d in range(topo.D2):
                rows = topo.ny[k] if d == topo.D2 - 1 else nh
                _check(self.Vy[k][d], (rows, nh), f"Vy[{k}][{d}]")
                _check(self.bg[k][d], (rows,), f"bg[{k}][{d}]")

    def named_arrays(self):
        """Yield ``(name, array)`` pairs in a fixed declared order."""
        topo = self.topology
        for k in range(topo.K):
            yield f"Wx[{k}]", self.Wx[k]
            for d in range(topo.D1):
                yield f"Uh[{k}][{d}]", self.Uh[k][d]
                yield f"bh[{k}][{d}]", self.bh[k][d]
            for d in range(topo.D2):
                yield f"Vy[{k}][{d}]", self.Vy[k][d]
                yield f"bg[{k}][{d}]", self.bg[k][d]

    def arrays(self):
        return [a for _, a in self.named_arrays()]

    def map(self, fn, *others):
        """Build a new ParameterSet by applying ``fn`` array-wise (zipped with ``others``)."""

        def ap(a, bs):
            return np.asarray(fn(a, *bs), dtype=np.float64)

        K, D1, D2 = self.topology.K, self.topology.D1, self.topology.D2
        Wx = [ap(self.Wx[k], [o.Wx[k] for o in others]) for k in range(K)]
        Uh = [[ap(self.Uh[k][d], [o.Uh[k][d] for o in others]) for d in range(D1)] for k in range(K)]
        bh = [[ap(self.bh[k][d], [o.bh[k][d] for o in others]) for d in range(D1)] for k in range(K)]
        Vy = [[ap(self.Vy[k][d], [o.Vy[k][d] for o in others]) for d in range(D2)] for k in range(K)]
        bg = [[ap(self.bg[k][d], [o.bg[k][d] for o in others]) for d in range(D2)] for k in range(K)]
        return ParameterSet(self.topology, Wx, Uh, bh, Vy, bg)

    def with_wx(self, Wx):
        return ParameterSet(self.topology, [np.asarray(w, dtype=np.float64) for w in Wx], self.Uh, self.bh, self.Vy, self.bg)

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, vec):
        """Inverse of :meth:`flat`, reusing this set's shapes."""
        vec = np.asarray(vec, dtype=np.float64)
        pos = [0]

        def take(a):
            n = a.size
            out = vec[pos[0] : pos[0] + n].reshape(a.shape).copy()
            pos[0] += n
            return out

        topo = self.topology
        Wx, Uh, bh, Vy, bg = [], [], [], [], []
        for k in range(topo.K):
            Wx.append(take(self.Wx[k]))
            uk, bk = [], []
            for d in range(topo.D1):
                uk.append(take(self.Uh[k][d]))
                bk.append(take(self.bh[k][d]))
            Uh.append(uk)
            bh.append(bk)
            vk, ck = [], []
            for d in range(topo.D2):
                vk.append(take(self.Vy[k][d]))
                ck.append(take(self.bg[k][d]))
            Vy.append(vk)
            bg.append(ck)
        if pos[0] != vec.size:
            raise ShapeError(f"flat vector has {vec.size} entries, expected {pos[0]}")
        return ParameterSet(topo, Wx, Uh, bh, Vy, bg)

    def sq_norm(self):
        return float(sum(np.sum(a * a) for a in self.arrays()))

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def _check(a, shape, name):
    if not isinstance(a, np.ndarray) or a.shape != shape:
        got = getattr(a, "shape", type(a).__name__)
        raise ShapeError(f"{name}: expected shape {shape}, got {got}")


def zeros_like_topology(topology):
    """A ParameterSet of the given topology with every entry zero."""
    nh = topology.nh
    Wx, Uh, bh, Vy, bg = [], [], [], [], []
    for k in range(topology.K):
        Wx.append(np.zeros((nh, topology.effective_nx(k))))
        Uh.append([np.zeros((nh, nh)) for _ in range(topology.D1)])
        bh.append([np.zeros(nh) for _ in range(topology.D1)])
        rows = [nh] * (topology.D2 - 1) + [topology.ny[k]]
        Vy.append([np.zeros((r, nh)) for r in rows])
        bg.append([np.zeros(r) for r in rows])
    return ParameterSet(topology, Wx, Uh, bh, Vy, bg)


def init_params(topology, seed):
    """Random initial parameters.

    Weight entries are i.i.d. normal with standard deviation
    ``1/sqrt(fan_in)``; biases are zero.  The draw order is fixed, so the
    same ``(topology, seed)`` always gives bitwise-identical arrays.
    """
    rng = substream(seed, "init")
    z = zeros_like_topology(topology)

    def draw(shape):
        fan_in = shape[1]
        if fan_in == 0 or shape[0] == 0:
            return np.zeros(shape)
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)

    Wx, Uh, Vy = [], [], []
    for k in range(topology.K):
        Wx.append(draw(z.Wx[k].shape))
        Uh.append([draw(u.shape) for u in z.Uh[k]])
        Vy.append([draw(v.shape) for v in z.Vy[k]])
    return ParameterSet(topology, Wx, Uh, z.bh, Vy, z.bg)


@dataclass
class StageTrace:
    inputs: np.ndarray  # effective transition input, (N, nx_eff)
    h_prev: np.ndarray  # (N, nh)
    trans: List[np.ndarray]  # post-activations of each transition layer; trans[-1] is h_k
    emit: List[np.ndarray]  # post-activations of the hidden emission layers
    yhat: np.ndarray  # (N, ny)

    @property
    def h(self):
        return self.trans[-1]


@dataclass
class ForwardTrace:
    stages: List[StageTrace]
    activation: Activation = SIGMOID
    self_fed: bool = False
    single: bool = False
    topology: Optional[StageTopology] = field(default=None, repr=False)

    @property
    def yhat(self):
        return [s.yhat for s in self.stages]

    @property
    def hidden(self):
        return [s.h for s in self.stages]

    @property
    def n_samples(self):
        return self.stages[0].h.shape[0]


def as_batch(seq, widths, what="x"):
    """Coerce a per-stage list of arrays to 2-D ``(N, width)`` arrays.

    Returns the converted list and whether the input was a single sample.
    """
    if len(seq) != len(widths):
        raise ShapeError(f"{what}: expected {len(widths)} stages, got {len(seq)}")
    arrs = [np.asarray(a, dtype=np.float64) for a in seq]
    single = all(a.ndim == 1 for a in arrs)
    out = []
    n = None
    for k, (a, w) in enumerate(zip(arrs, widths)):
        if a.ndim == 1:
            a = a.reshape(1, -1)
        if a.ndim != 2 or a.shape[1] != w:
            raise ShapeError(f"{what}[{k}]: expected width {w}, got shape {a.shape}")
        if n is None:
            n = a.shape[0]
        elif a.shape[0] != n:
            raise ShapeError(f"{what}[{k}]: {a.shape[0]} samples, expected {n}")
        out.append(a)
    return out, single


def forward(params, x_seq, y_seq=None, activation=SIGMOID):
    """Run the stage chain and keep every activation needed for backpropagation.

    Parameters
    ----------
    params : ParameterSet
    x_seq : list of arrays
        Raw stage inputs, ``x_seq[k]`` of shape ``(N, nx[k])`` or ``(nx[k],)``.
    y_seq : list of arrays, optional
        Observed outputs.  Only consulted when the topology feeds previous
        outputs forward; when given they are used as the fed values,
        otherwise the model's own predictions are fed.
    activation : Activation
        Test hook; the model is defined with the sigmoid.
    """
    topo = params.topology
    xs, single = as_batch(x_seq, topo.nx)
    n = xs[0].shape[0]
    fed_obs = None
    if topo.feed_prev_outputs and y_seq is not None:
        fed_obs, _ = as_batch(y_seq, topo.ny, what="y")
    act = activation.fn
    h_prev = np.zeros((n, topo.nh))
    stages = []
    for k in range(topo.K):
        inp = xs[k]
        if topo.feed_prev_outputs and k > 0:
            prev = fed_obs[k - 1] if fed_obs is not None else stages[-1].yhat
            inp = np.concatenate([inp, prev], axis=1)
        z = inp @ params.Wx[k].T + h_prev @ params.Uh[k][0].T + params.bh[k][0]
        trans = [act(z)]
        for d in range(1, topo.D1):
            trans.append(act(trans[-1] @ params.Uh[k][d].T + params.bh[k][d]))
        e = trans[-1]
        emit = []
        for d in range(topo.D2 - 1):
            e = act(e @ params.Vy[k][d].T + params.bg[k][d])
            emit.append(e)
        yhat = e @ params.Vy[k][-1].T + params.bg[k][-1]
        stages.append(StageTrace(inp, h_prev, trans, emit, yhat))
        h_prev = trans[-1]
    self_fed = topo.feed_prev_outputs and fed_obs is None
    return ForwardTrace(stages, activation, self_fed, single, topo)


def predict(params, x_seq, activation=SIGMOID):
    """Per-stage predictions; previous outputs, if fed, are the model's own."""
    trace = forward(params, x_seq, activation=activation)
    if trace.single:
        return [y[0] for y in trace.yhat]
    return trace.yhat
