"""Reverse-mode differentiation through the stage chain.

Both parameter gradients and input sensitivities run through the same
backward sweep (:func:`_sweep`): stages are visited last to first, the
gradient reaching ``h_k`` is the emission gradient of stage ``k`` plus what
stage ``k+1`` sends back through ``Uh[k+1][0]``.
"""

import numpy as np

from dmmtl.errors import ShapeError
from dmmtl.model import ParameterSet, as_batch, forward, zeros_like_topology

# Parameter gradients have the same structure as the parameters themselves.
ParamGrads = ParameterSet


def _sweep(params, trace, dyhat, want_params=True):
    topo = params.topology
    if trace.topology is not None and trace.topology != topo:
        raise ShapeError("trace was produced with a different topology")
    if len(trace.stages) != topo.K:
        raise ShapeError(f"trace has {len(trace.stages)} stages, parameters have {topo.K}")
    n = trace.n_samples
    dyhat, _ = as_batch(dyhat, topo.ny, what="loss_grads")
    if dyhat[0].shape[0] != n:
        raise ShapeError(f"loss_grads carry {dyhat[0].shape[0]} samples, trace has {n}")
    dact = trace.activation.grad_from_output

    if want_params:
        g = zeros_like_topology(topo)
    input_grads = [None] * topo.K
    dh_next = np.zeros((n, topo.nh))
    fed_back = None  # gradient w.r.t. yhat_k arriving from stage k+1's input
    for k in reversed(range(topo.K)):
        st = trace.stages[k]
        dy = dyhat[k] if fed_back is None else dyhat[k] + fed_back
        fed_back = None
        # emission: linear head, then hidden sigmoid layers in reverse
        below = st.emit[-1] if st.emit else st.h
        if want_params:
            g.Vy[k][-1][...] = dy.T @ below
            g.bg[k][-1][...] = dy.sum(axis=0)
        de = dy @ params.Vy[k][-1]
        for d in reversed(range(topo.D2 - 1)):
            dz = de * dact(st.emit[d])
            below = st.emit[d - 1] if d > 0 else st.h
            if want_params:
                g.Vy[k][d][...] = dz.T @ below
                g.bg[k][d][...] = dz.sum(axis=0)
            de = dz @ params.Vy[k][d]
        dh = de + dh_next
        # transition layers above the first
        for d in reversed(range(1, topo.D1)):
            dz = dh * dact(st.trans[d])
            if want_params:
                g.Uh[k][d][...] = dz.T @ st.trans[d - 1]
                g.bh[k][d][...] = dz.sum(axis=0)
            dh = dz @ params.Uh[k][d]
        dz = dh * dact(st.trans[0])
        if want_params:
            g.Wx[k][...] = dz.T @ st.inputs
            g.Uh[k][0][...] = dz.T @ st.h_prev
            g.bh[k][0][...] = dz.sum(axis=0)
        dh_next = dz @ params.Uh[k][0]
        dinp = dz @ params.Wx[k]
        input_grads[k] = dinp[:, : topo.nx[k]]
        if trace.self_fed and k > 0:
            fed_back = dinp[:, topo.nx[k] :]
    return (g if want_params else None), input_grads


def backward(params, trace, loss_grads):
    """Gradient of a loss with respect to every parameter.

    Parameters
    ----------
    params : ParameterSet
        The parameters ``trace`` was computed with.
    trace : ForwardTrace
    loss_grads : list of arrays
        ``loss_grads[k]`` is dL/dyhat_k, shaped like ``trace.yhat[k]``.

    Returns
    -------
    ParamGrads
        Summed over the samples in the trace.
    """
    grads, _ = _sweep(params, trace, loss_grads, want_params=True)
    return grads


def input_gradient(params, trace, target):
    """Sensitivity of one output to every input, per sample.

    ``target = (p, q)`` names output ``q`` of stage ``p`` (both 0-based).
    Returns a list with ``out[k]`` of shape ``(N, nx[k])`` holding
    d yhat_pq / d x_k; stages after ``p`` are identically zero.
    """
    topo = params.topology
    p, q = target
    if not (0 <= p < topo.K) or not (0 <= q < topo.ny[p]):
        raise ValueError(f"target {target} is out of range for this topology")
    n = trace.n_samples
    seed = [np.zeros((n, topo.ny[k])) for k in range(topo.K)]
    seed[p][:, q] = 1.0
    _, grads = _sweep(params, trace, seed, want_params=False)
    for k in range(p + 1, topo.K):
        grads[k] = np.zeros_like(grads[k])
    return grads


def sse_and_grad(params, x_seq, y_seq):
    """Summed squared error over samples and outputs, and its parameter gradient."""
    trace = forward(params, x_seq, y_seq)
    ys, _ = as_batch(y_seq, params.topology.ny, what="y")
    resid = [yh - y for yh, y in zip(trace.yhat, ys)]
    loss = float(sum(np.sum(r * r) for r in resid))
    return loss, backward(params, trace, [2.0 * r for r in resid])


def finite_diff_check(params, x_seq, y_seq, eps=1e-5):
    """Largest relative disagreement between :func:`backward` and central differences.

    The objective is the summed squared error.  The relative error of each
    coordinate is ``|analytic - numeric| / (|analytic| + 1e-8)``, except that
    coordinates where both values are below ``1e-8`` in magnitude count as exact.

    The difference ``f(theta+eps) - f(theta-eps)`` is accumulated per term as
    ``(yp - ym) * (yp + ym - 2y)`` rather than by subtracting two large sums,
    which keeps cancellation error well below the tolerance on small
    gradient components.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    _, grads = sse_and_grad(params, x_seq, y_seq)
    ys, _ = as_batch(y_seq, params.topology.ny, what="y")
    analytic = grads.flat()
    theta = params.flat()
    worst = 0.0
    for i in range(theta.size):
        tp = theta.copy()
        tp[i] += eps
        tm = theta.copy()
        tm[i] -= eps
        yp = forward(params.unflatten(tp), x_seq, y_seq).yhat
        ym = forward(params.unflatten(tm), x_seq, y_seq).yhat
        diff_f = sum(float(np.sum((a - b) * (a + b - 2.0 * y))) for a, b, y in zip(yp, ym, ys))
        numeric = diff_f / (2.0 * eps)
        diff = abs(analytic[i] - numeric)
        if diff < 1e-8 and abs(analytic[i]) < 1e-8:
            continue
        worst = max(worst, diff / (abs(analytic[i]) + 1e-8))
    return worst
