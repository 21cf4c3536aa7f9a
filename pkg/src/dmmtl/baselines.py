"""Linear reference predictors: ridge, elastic net, multi-task elastic net, SoV oracle.

All linear baselines predict a stage-``k`` output from the concatenated
inputs of stages ``1..k``.  Intercepts are unpenalised (data are centred
internally).  Objectives, with ``n`` samples::

    ridge:  ||Y - XW||^2/(2n) + (lam/2) ||W||^2
    EN:     ||y - Xw||^2/(2n) + alpha*beta*||w||_1 + alpha*(1-beta)/2 ||w||^2
    MEN:    ||Y - XW||^2/(2n) + alpha*beta*sum_i ||W_i,:|| + alpha*(1-beta)/2 ||W||^2
"""

from dataclasses import dataclass, field

import numba
import numpy as np

from dmmtl.data import latent_outputs
from dmmtl.errors import ConvergenceError


@dataclass
class LinearModel:
    coef: np.ndarray  # (p, n_tasks)
    intercept: np.ndarray  # (n_tasks,)
    kind: str
    stage: int = 0
    feature_map: str = "concat(x_1..x_k)"
    hyper: dict = field(default_factory=dict)

    def predict(self, features):
        return np.asarray(features, dtype=np.float64) @ self.coef + self.intercept


def stage_features(X, k):
    """Concatenated inputs of stages ``0..k`` (0-based)."""
    return np.concatenate([np.asarray(x, dtype=np.float64) for x in X[: k + 1]], axis=1)


def _center(X, Y):
    xm = X.mean(axis=0)
    ym = Y.mean(axis=0)
    return X - xm, Y - ym, xm, ym


def _as_targets(Y):
    Y = np.asarray(Y, dtype=np.float64)
    return Y.reshape(-1, 1) if Y.ndim == 1 else Y


# ----------------------------------------------------------------------------
# ridge


def ridge_fit(features, targets, lam):
    """Closed-form ridge regression through the normal equations."""
    if lam <= 0:
        raise ValueError("ridge needs lam > 0")
    X = np.asarray(features, dtype=np.float64)
    Y = _as_targets(targets)
    Xc, Yc, xm, ym = _center(X, Y)
    n, p = X.shape
    A = Xc.T @ Xc / n + lam * np.eye(p)
    W = np.linalg.solve(A, Xc.T @ Yc / n)
    return LinearModel(W, ym - xm @ W, "ridge", hyper={"lam": lam})


# ----------------------------------------------------------------------------
# elastic net


@numba.njit(cache=True)
def _cd_gram(G, c, w, l1, l2, tol, max_sweeps):
    # minimises 0.5 w'Gw - c'w + l1*|w|_1 + 0.5*l2*|w|^2 one coordinate at a time
    p = w.shape[0]
    Gw = G @ w
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            wj = w[j]
            rho = c[j] - Gw[j] + G[j, j] * wj
            mag = abs(rho) - l1
            new = 0.0
            if mag > 0.0:
                new = np.sign(rho) * mag / (G[j, j] + l2)
            if new != wj:
                d = new - wj
                for i in range(p):
                    Gw[i] += d * G[i, j]
                w[j] = new
                if abs(d) > max_delta:
                    max_delta = abs(d)
        if max_delta < tol:
            return sweep + 1, True
    return max_sweeps, False


def _en_solve(G, c, alpha, beta, w0=None, tol=1e-8, max_sweeps=10000):
    w = np.zeros(G.shape[0]) if w0 is None else np.array(w0, dtype=np.float64)
    _, ok = _cd_gram(G, c, w, alpha * beta, alpha * (1.0 - beta), tol, max_sweeps)
    if not ok:
        raise ConvergenceError(f"elastic net did not converge in {max_sweeps} sweeps (alpha={alpha})")
    return w


def elastic_net_fit(features, target, alpha, beta, tol=1e-8, max_sweeps=10000, w0=None):
    """Coordinate-descent elastic net for a single target.

    Stops when no coefficient moves by more than ``tol`` in a full sweep.
    """
    if alpha < 0 or not 0 <= beta <= 1:
        raise ValueError("need alpha >= 0 and 0 <= beta <= 1")
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64).ravel()
    Xc, yc, xm, ym = _center(X, y[:, None])
    n = X.shape[0]
    G = Xc.T @ Xc / n
    c = Xc.T @ yc[:, 0] / n
    w = _en_solve(G, c, alpha, beta, w0, tol, max_sweeps)
    return LinearModel(w[:, None], ym - xm @ w[:, None], "en", hyper={"alpha": alpha, "beta": beta})


def en_objective(features, target, model):
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64).ravel()
    a, b = model.hyper["alpha"], model.hyper["beta"]
    w = model.coef[:, 0]
    r = y - model.predict(X)[:, 0]
    return float(r @ r / (2 * len(y)) + a * b * np.abs(w).sum() + 0.5 * a * (1 - b) * w @ w)


# ----------------------------------------------------------------------------
# multi-task elastic net


def _row_shrink(W, t):
    norms = np.linalg.norm(W, axis=1)
    scale = np.zeros_like(norms)
    keep = norms > t
    scale[keep] = 1.0 - t / norms[keep]
    return W * scale[:, None]


def _men_obj(G, C, yy, W, l21, l2):
    # 0.5*tr(W'GW) - tr(C'W) + 0.5*yy is ||Y - XW||^2/(2n) for centred data
    smooth = 0.5 * np.sum(W * (G @ W)) - np.sum(C * W) + 0.5 * yy
    return smooth + l21 * np.linalg.norm(W, axis=1).sum() + 0.5 * l2 * np.sum(W * W)


def _men_solve(G, C, yy, alpha, beta, W0=None, tol=1e-8, max_iter=20000, lipschitz=None, history=None):
    """Monotone accelerated proximal gradient with row-wise group shrinkage.

    Each iterate is the better (in objective) of the new proximal point and
    the previous iterate, so the objective never increases.
    """
    l21 = alpha * beta
    l2 = alpha * (1.0 - beta)
    if lipschitz is None:
        lipschitz = float(np.linalg.eigvalsh(G)[-1])
    step = 1.0 / (lipschitz + l2)
    W = np.zeros_like(C) if W0 is None else np.array(W0, dtype=np.float64)
    Z = W.copy()
    t = 1.0
    obj = _men_obj(G, C, yy, W, l21, l2)
    if history is not None:
        history.append(obj)
    for _ in range(max_iter):
        grad = G @ Z - C + l2 * Z
        U = _row_shrink(Z - step * grad, step * l21)
        u_obj = _men_obj(G, C, yy, U, l21, l2)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        W_prev = W
        if u_obj <= obj:
            W, obj = U, u_obj
        Z = W + (t / t_next) * (U - W) + ((t - 1.0) / t_next) * (W - W_prev)
        t = t_next
        if history is not None:
            history.append(obj)
        if np.max(np.abs(U - W_prev)) < tol:
            return W
    raise ConvergenceError(f"multi-task elastic net did not converge in {max_iter} iterations (alpha={alpha})")


def men_fit(features, targets, alpha, beta, tol=1e-8, max_iter=20000, W0=None, history=None):
    """Multi-task elastic net: all targets share the row sparsity pattern of ``W``."""
    if alpha < 0 or not 0 <= beta <= 1:
        raise ValueError("need alpha >= 0 and 0 <= beta <= 1")
    X = np.asarray(features, dtype=np.float64)
    Y = _as_targets(targets)
    Xc, Yc, xm, ym = _center(X, Y)
    n = X.shape[0]
    G = Xc.T @ Xc / n
    C = Xc.T @ Yc / n
    yy = float(np.sum(Yc * Yc) / n)
    W = _men_solve(G, C, yy, alpha, beta, W0, tol, max_iter, history=history)
    return LinearModel(W, ym - xm @ W, "men", hyper={"alpha": alpha, "beta": beta})


def men_objective(features, targets, model):
    X = np.asarray(features, dtype=np.float64)
    Y = _as_targets(targets)
    a, b = model.hyper["alpha"], model.hyper["beta"]
    W = model.coef
    R = Y - model.predict(X)
    return float(
        np.sum(R * R) / (2 * len(Y)) + a * b * np.linalg.norm(W, axis=1).sum() + 0.5 * a * (1 - b) * np.sum(W * W)
    )


# ----------------------------------------------------------------------------
# validation-tuned stage-wise fits


def _alpha_grid(C, beta, n_alphas, eps):
    top = np.max(np.linalg.norm(np.atleast_2d(C.T).T, axis=1)) / max(beta, 1e-3)
    return top * np.logspace(0, np.log10(eps), n_alphas)


def _val_sse(model, F, Y):
    R = Y - model.predict(F)
    return float(np.sum(R * R, axis=0).sum())


def fit_stagewise(kind, train, val, beta=0.5, n_alphas=12, eps=1e-3, ridge_grid=None, tol=1e-6):
    """Fit one baseline family stage by stage, picking the penalty on the validation split.

    ``kind`` is ``"ridge"``, ``"lr"`` (ridge with a negligible penalty),
    ``"en"`` (one model per output) or ``"men"`` (one model per stage).
    Returns a list with, per stage, a list of LinearModel objects (one per
    output for EN, a single multi-output model otherwise).
    """
    out = []
    for k in range(train.K):
        F = stage_features(train.X, k)
        Fv = stage_features(val.X, k)
        Y, Yv = train.Y[k], val.Y[k]
        if Y.shape[1] == 0:
            out.append([])
            continue
        if kind == "lr":
            out.append([ridge_fit(F, Y, 1e-8)])
            continue
        if kind == "ridge":
            grid = np.logspace(-3, 3, 13) if ridge_grid is None else ridge_grid
            fits = [ridge_fit(F, Y, lam) for lam in grid]
            out.append([min(fits, key=lambda m: _val_sse(m, Fv, Yv))])
            continue
        Xc, Yc, xm, ym = _center(F, Y)
        n = F.shape[0]
        G = Xc.T @ Xc / n
        C = Xc.T @ Yc / n
        if kind == "en":
            models = []
            for j in range(Y.shape[1]):
                best, w = None, None
                for a in _alpha_grid(C[:, j], beta, n_alphas, eps):
                    w = _en_solve(G, C[:, j], a, beta, w, tol=tol)
                    m = LinearModel(w[:, None].copy(), ym[j : j + 1] - xm @ w[:, None], "en", k, hyper={"alpha": a, "beta": beta})
                    s = _val_sse(m, Fv, Yv[:, j : j + 1])
                    if best is None or s < best[0]:
                        best = (s, m)
                models.append(best[1])
            out.append(models)
        elif kind == "men":
            yy = float(np.sum(Yc * Yc) / n)
            lip = float(np.linalg.eigvalsh(G)[-1])
            best, W = None, None
            for a in _alpha_grid(C, beta, n_alphas, eps):
                W = _men_solve(G, C, yy, a, beta, W, tol=tol, lipschitz=lip)
                m = LinearModel(W.copy(), ym - xm @ W, "men", k, hyper={"alpha": a, "beta": beta})
                s = _val_sse(m, Fv, Yv)
                if best is None or s < best[0]:
                    best = (s, m)
            out.append([best[1]])
        else:
            raise ValueError(f"unknown baseline kind {kind!r}")
    return out


def predict_stagewise(models, X):
    preds = []
    for k, stage_models in enumerate(models):
        if not stage_models:
            preds.append(np.zeros((X[0].shape[0], 0)))
            continue
        F = stage_features(X, k)
        preds.append(np.concatenate([m.predict(F) for m in stage_models], axis=1))
    return preds


def coefficient_importance(models, nx, last_stage_only=False):
    """Per-input score: norm of the coefficients attached to that input.

    By default every fitted output contributes.  With ``last_stage_only``
    only the models of the final stage are used (they see every input).
    """
    sq = [np.zeros(n) for n in nx]
    offsets = np.concatenate([[0], np.cumsum(nx)])
    first = len(models) - 1 if last_stage_only else 0
    for k in range(first, len(models)):
        for m in models[k]:
            c2 = np.sum(m.coef ** 2, axis=1)
            for s in range(k + 1):
                sq[s] += c2[offsets[s] : offsets[s + 1]]
    return [np.sqrt(v) for v in sq]


# ----------------------------------------------------------------------------
# oracle


def sov_oracle_predict(truth, x_seq):
    """Noise-free outputs of the true generator recursion (raw, un-normalised units)."""
    if truth is None:
        raise ValueError("dataset carries no generator truth")
    X = [np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in x_seq]
    return latent_outputs(truth, X)


def sov_oracle_predict_normalized(dataset):
    """Oracle predictions for a normalised split, returned in the split's normalised units."""
    st = dataset.stats
    if st is None:
        return sov_oracle_predict(dataset.truth, dataset.X)
    raw = [x * s + m for x, m, s in zip(dataset.X, st.x_mean, st.x_std)]
    pred = sov_oracle_predict(dataset.truth, raw)
    return [(y - m) / s for y, m, s in zip(pred, st.y_mean, st.y_std)]
