import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dmmtl.errors import ShapeError
from dmmtl.tensor import matvec, sigmoid, soft_threshold_block, soft_threshold_scalar

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_matvec_identity_and_zero():
    np.testing.assert_array_equal(matvec(np.eye(3), [1, 2, 3]), [1, 2, 3])
    np.testing.assert_array_equal(matvec(np.zeros((2, 3)), [5, 5, 5]), [0, 0])


def test_matvec_hand_computed():
    # (1*1 + 2*1, 3*1 + 4*1)
    np.testing.assert_array_equal(matvec([[1, 2], [3, 4]], [1, 1]), [3, 7])


def test_matvec_shape_error():
    with pytest.raises(ShapeError):
        matvec(np.ones((2, 3)), np.ones(2))


@given(
    arrays(np.float64, (3, 4), elements=finite),
    arrays(np.float64, 4, elements=finite),
    arrays(np.float64, 4, elements=finite),
    finite,
    finite,
)
def test_matvec_linear(m, u, v, a, b):
    lhs = matvec(m, a * u + b * v)
    rhs = a * matvec(m, u) + b * matvec(m, v)
    scale = np.abs(m).sum() * (abs(a) * np.abs(u).max() + abs(b) * np.abs(v).max()) + 1.0
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


def test_sigmoid_values():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    big = sigmoid(np.array([1000.0]))[0]
    assert 1 - 1e-12 < big <= 1.0
    with np.errstate(over="raise"):
        sigmoid(np.array([-1000.0, 1000.0, -40.0, 40.0]))


@given(arrays(np.float64, 20, elements=st.floats(-50, 50)))
def test_sigmoid_symmetry_bounds_monotone(x):
    s = sigmoid(x)
    np.testing.assert_allclose(s + sigmoid(-x), 1.0, atol=1e-15)
    assert np.all((s > 0) & (s <= 1))
    order = np.argsort(x, kind="stable")
    assert np.all(np.diff(s[order]) >= 0)


def test_soft_threshold_scalar():
    assert soft_threshold_scalar(5, 2) == 3
    assert soft_threshold_scalar(-1, 2) == 0
    assert soft_threshold_scalar(-5, 2) == -3
    with pytest.raises(ValueError):
        soft_threshold_scalar(1, -0.1)


@given(finite)
def test_soft_threshold_identity_at_zero(x):
    assert soft_threshold_scalar(x, 0.0) == x


def test_soft_threshold_block_examples():
    np.testing.assert_array_equal(soft_threshold_block([3.0, 4.0], 5.0), [0.0, 0.0])
    np.testing.assert_array_equal(soft_threshold_block([3.0, 4.0], 0.0), [3.0, 4.0])
    np.testing.assert_allclose(soft_threshold_block([3.0, 4.0], 2.5), [1.5, 2.0], rtol=1e-15)
    with pytest.raises(ValueError):
        soft_threshold_block([1.0], -1.0)


def test_soft_threshold_block_example_by_scan():
    # minimise 0.5*|s*w - w|^2 + t*|s*w| over the scale s in [0, 1]
    w = np.array([3.0, 4.0])
    t = 2.5
    s = np.linspace(0, 1, 100001)
    cost = 0.5 * (s - 1) ** 2 * (w @ w) + t * s * np.linalg.norm(w)
    best = s[np.argmin(cost)] * w
    np.testing.assert_allclose(soft_threshold_block(w, t), best, atol=1e-4)


def test_block_reduces_to_scalar_in_1d():
    for x in (-3.0, -0.5, 0.0, 0.7, 4.0):
        assert soft_threshold_block([x], 1.0)[0] == pytest.approx(soft_threshold_scalar(x, 1.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 4), st.integers(0, 10_000))
def test_block_is_exact_prox(dim, seed):
    # Independent check: numerically minimise 0.5|u - w|^2 + t|u| from several starts.
    from scipy.optimize import minimize

    rng = np.random.default_rng(seed)
    w = rng.normal(size=dim) * 2
    t = rng.uniform(0, 3)

    def f(u):
        return 0.5 * np.sum((u - w) ** 2) + t * np.linalg.norm(u)

    starts = [w, np.zeros(dim) + 1e-3, rng.normal(size=dim)]
    best = min((minimize(f, s, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000}) for s in starts), key=lambda r: r.fun)
    u = soft_threshold_block(w, t)
    assert f(u) <= best.fun + 1e-10
    np.testing.assert_allclose(u, best.x, atol=1e-6)
