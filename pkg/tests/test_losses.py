import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmmtl.losses import (
    TrainConfig,
    data_loss,
    full_objective,
    group_penalty,
    huber,
    huber_grad,
    l2_penalty,
    objective,
    optimal_outliers,
    residuals,
    sse_loss,
)
from dmmtl.model import StageTopology, zeros_like_topology
from dmmtl.optimizer import update_outliers

from conftest import perturbed_params, random_batch


def test_huber_examples():
    assert huber(0.2, 1.0) == pytest.approx(0.04)
    assert huber(0.5, 1.0) == pytest.approx(0.25)
    assert huber(2.0, 1.0) == pytest.approx(1.75)
    assert huber(-2.0, 1.0) == pytest.approx(1.75)
    np.testing.assert_allclose(huber(np.array([0.0, 3.0]), 2.0), [0.0, 5.0])
    with pytest.raises(ValueError):
        huber(1.0, 0.0)


def test_huber_is_continuous_at_the_kink():
    for g in (0.5, 1.0, 2.0):
        k = g / 2
        assert huber(k - 1e-12, g) == pytest.approx(huber(k + 1e-12, g), abs=1e-10)
        assert huber_grad(k, g) == pytest.approx(g)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_outlier_minimiser_reproduces_huber(gamma):
    rng = np.random.default_rng(int(gamma * 10))
    r = rng.normal(scale=2.0, size=200)
    a = update_outliers([r], gamma)[0]
    np.testing.assert_allclose((r - a) ** 2 + gamma * np.abs(a), huber(r, gamma), atol=1e-12)
    grid = np.arange(-8.0, 8.0, 1e-3)
    for ri, ai in zip(r[:20], a[:20]):
        scan = (ri - grid) ** 2 + gamma * np.abs(grid)
        assert (ri - ai) ** 2 + gamma * abs(ai) <= scan.min() + 1e-12


def test_sse_mode_has_no_outliers():
    r = [np.array([[5.0, -5.0]])]
    assert not update_outliers(r, 1.0, "sse")[0].any()
    assert not optimal_outliers(r, TrainConfig())[0].any()


def test_penalties_hand_values():
    t = StageTopology(K=1, nx=(2,), ny=(1,), nh=2)
    p = zeros_like_topology(t)
    p.Wx[0][:, 0] = [3.0, 4.0]
    assert group_penalty(p, 0.5) == pytest.approx(2.5)
    assert l2_penalty(p, 0.1) == pytest.approx(0.05 * 25)
    with pytest.raises(ValueError):
        group_penalty(p, -1.0)


def test_group_penalty_is_permutation_invariant_and_homogeneous(small_topology):
    p = perturbed_params(small_topology, 0)
    base = group_penalty(p, 1.0)
    rng = np.random.default_rng(0)
    shuffled = p.with_wx([w[:, rng.permutation(w.shape[1])] for w in p.Wx])
    assert group_penalty(shuffled, 1.0) == pytest.approx(base, rel=1e-14)
    assert group_penalty(p.with_wx([3 * w for w in p.Wx]), 1.0) == pytest.approx(3 * base, rel=1e-14)


def test_objective_decomposes(small_topology):
    p = perturbed_params(small_topology, 1)
    X, Y = random_batch(small_topology, 8, 1)
    cfg = TrainConfig(lambda_x=0.2, lam=0.01)
    res = residuals(p, X, Y)
    expected = sum(sse_loss(r) for r in res) / 8 + group_penalty(p, 0.2) + l2_penalty(p, 0.01)
    assert objective(p, X, Y, cfg) == pytest.approx(expected, rel=1e-12)
    assert full_objective(p, X, Y, cfg) == pytest.approx(expected, rel=1e-12)


def test_huber_objective_at_optimal_outliers(small_topology):
    p = perturbed_params(small_topology, 2)
    X, Y = random_batch(small_topology, 8, 2)
    Y = [3 * y for y in Y]
    cfg = TrainConfig(loss_kind="huber", gamma=1.0)
    a = optimal_outliers(residuals(p, X, Y), cfg)
    assert any(np.any(ak != 0) for ak in a)
    assert objective(p, X, Y, cfg, outliers=a) == pytest.approx(full_objective(p, X, Y, cfg), rel=1e-12)
    assert objective(p, X, Y, cfg) > full_objective(p, X, Y, cfg)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.sampled_from([0.5, 1.0, 2.0]))
def test_huber_never_exceeds_squared_error(r, gamma):
    r = np.array(r)
    cfg = TrainConfig(loss_kind="huber", gamma=gamma)
    assert data_loss([r[:, None]], cfg) <= data_loss([r[:, None]], cfg.replace(loss_kind="sse")) + 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(loss_kind="l1")
    with pytest.raises(ValueError):
        TrainConfig(gamma=0.0)
    with pytest.raises(ValueError):
        TrainConfig(prox_step=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_x=-0.1)
    assert TrainConfig().replace(epochs=3).epochs == 3
    assert "lambda_x" in TrainConfig.field_names()
