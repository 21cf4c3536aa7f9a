"""Dense kernels and elementwise nonlinearities.

Vectors and matrices are plain float64 numpy arrays (1-D and 2-D, row-major).
Everything here is a pure function.
"""

from typing import Callable, NamedTuple

import numpy as np

from dmmtl.errors import ShapeError


def as_vec(v):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {a.shape}")
    return a


def as_mat(m):
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matvec(m, v):
    """Matrix-vector product with an explicit shape check."""
    m = as_mat(m)
    v = as_vec(v)
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"cannot multiply {m.shape[0]}x{m.shape[1]} matrix by length-{v.shape[0]} vector")
    return m @ v


def sigmoid(x):
    """Logistic function, evaluated branch-wise so that large |x| never overflows."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def soft_threshold_scalar(x, t):
    """``sgn(x) * max(|x| - t, 0)``, elementwise if ``x`` is an array."""
    if t < 0:
        raise ValueError(f"threshold must be non-negative, got {t}")
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.maximum(np.abs(x) - t, 0.0)
    return float(out) if out.ndim == 0 else out


def soft_threshold_block(w, t):
    """Shrink the Euclidean norm of ``w`` by ``t``.

    This is the proximal map of ``t * ||.||_2``: the result is
    ``w * max(1 - t / ||w||, 0)`` and is exactly the zero vector when
    ``||w|| <= t``.
    """
    if t < 0:
        raise ValueError(f"threshold must be non-negative, got {t}")
    w = np.asarray(w, dtype=np.float64)
    norm = np.linalg.norm(w)
    if norm <= t:
        return np.zeros_like(w)
    return w * (1.0 - t / norm)


def soft_threshold_columns(w, t):
    """Apply :func:`soft_threshold_block` to every column of a matrix at once."""
    if t < 0:
        raise ValueError(f"threshold must be non-negative, got {t}")
    w = np.asarray(w, dtype=np.float64)
    norms = np.linalg.norm(w, axis=0)
    scale = np.zeros_like(norms)
    keep = norms > t
    scale[keep] = 1.0 - t / norms[keep]
    return w * scale


class Activation(NamedTuple):
    """An elementwise nonlinearity and its derivative written in terms of its output."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    grad_from_output: Callable[[np.ndarray], np.ndarray]


SIGMOID = Activation("sigmoid", sigmoid, lambda a: a * (1.0 - a))

# Only used by tests that need a closed-form linear chain.
IDENTITY = Activation("identity", lambda z: np.array(z, dtype=np.float64), lambda a: np.ones_like(a))
