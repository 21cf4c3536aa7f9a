import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmmtl.data import GeneratorSpec, generate
from dmmtl.diagnostics import (
    auc,
    global_importance,
    local_importance,
    mean_relative_rmse,
    metrics_report,
    relative_rmse,
    rmse_quantiles,
    selection_metrics,
    selection_threshold,
    threshold_sweep,
)
from dmmtl.gradients import input_gradient
from dmmtl.model import StageTopology, forward, zeros_like_topology
from dmmtl.tensor import IDENTITY

from conftest import perturbed_params, random_batch


def test_relative_rmse_of_mean_predictor_is_one():
    rng = np.random.default_rng(0)
    Y = [rng.normal(size=(50, 3)), rng.normal(size=(50, 2))]
    m = [y.mean(axis=0) for y in Y]
    for r in relative_rmse(Y, [np.broadcast_to(mi, y.shape) for mi, y in zip(m, Y)], m):
        np.testing.assert_allclose(r, 1.0)


def test_relative_rmse_hand_value_and_sentinel():
    y = np.array([[1.0, 5.0], [3.0, 5.0]])
    yh = np.array([[1.5, 5.0], [2.5, 4.0]])
    r = relative_rmse([y], [yh], [np.array([2.0, 5.0])])[0]
    assert r[0] == pytest.approx(0.25)
    assert np.isnan(r[1])
    assert mean_relative_rmse([y], [yh], [np.array([2.0, 5.0])]) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        relative_rmse([y], [yh[:, :1]], [np.zeros(2)])


def test_quantiles():
    vals = np.arange(1, 11) / 10
    np.testing.assert_allclose(rmse_quantiles(vals, (0.2, 0.7)), [0.28, 0.73])
    assert rmse_quantiles([0.4], (0.1, 0.9)).tolist() == [0.4, 0.4]
    q = rmse_quantiles(np.random.default_rng(0).random(30), (0.2, 0.4, 0.5, 0.7))
    assert np.all(np.diff(q) >= 0)
    with pytest.raises(ValueError):
        rmse_quantiles([], (0.5,))
    with pytest.raises(ValueError):
        rmse_quantiles([1.0], (1.0,))


def test_threshold_sweep_and_report():
    t = threshold_sweep()
    assert len(t) == 19 and t[0] == 0.05 and t[-1] == 0.95
    y = [np.array([[0.0, 0.0], [2.0, 2.0]])]
    rep = metrics_report(y, [np.array([[0.1, 0.5], [1.9, 1.5]])], [np.ones(2)], thresholds=t)
    assert rep.quantiles.shape == (4,)
    assert rep.counts_below[-1] == 2 and rep.counts_below[0] == 1


def brute_auc(s, t):
    pos = [a for a, m in zip(s, t) if m]
    neg = [a for a, m in zip(s, t) if not m]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auc_against_pairwise_count():
    s = [0.9, 0.1, 0.4, 0.4, 0.8, 0.2]
    t = [True, False, True, False, False, True]
    assert auc(s, t) == pytest.approx(brute_auc(s, t))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=15))
def test_auc_property(pairs):
    s = [float(a) for a, _ in pairs]
    t = [b for _, b in pairs]
    if all(t) or not any(t):
        assert np.isnan(auc(s, t))
        return
    assert auc(s, t) == pytest.approx(brute_auc(s, t))
    # strictly monotone transforms leave the AUC unchanged
    assert auc(np.exp(3 * np.array(s)) - 7, t) == pytest.approx(auc(s, t))


def test_random_scores_give_auc_near_half():
    rng = np.random.default_rng(0)
    t = np.arange(200) < 100
    vals = [auc(rng.random(200), t) for _ in range(200)]
    # each AUC has sd about 0.041; the mean of 200 has sd about 0.003
    assert abs(np.mean(vals) - 0.5) < 0.012


def test_selection_metrics():
    t = np.array([True] * 5 + [False] * 5)
    assert selection_metrics(np.arange(10, 0, -1), t) == (1.0, 1.0, 1.0)
    p, r, a = selection_metrics(np.ones(10), np.ones(10, dtype=bool))
    assert np.isnan(p) and np.isnan(r) and np.isnan(a)
    with pytest.raises(ValueError):
        selection_metrics(np.ones(3), t)
    with pytest.raises(ValueError):
        selection_metrics(np.ones(10), t, fpr=0.0)


def test_selection_threshold_respects_fpr():
    rng = np.random.default_rng(1)
    s = rng.random(100)
    t = rng.random(100) < 0.5
    c = selection_threshold(s, t, fpr=0.1)
    assert np.mean(s[~t] >= c) <= 0.1
    lower = s[s < c]
    if lower.size:
        assert np.mean(s[~t] >= lower.max()) > 0.1


def test_global_importance(small_topology):
    p = perturbed_params(small_topology, 0)
    p.Wx[1][:, 2] = 0.0
    g = global_importance(p)
    assert g.scores[1][2] == 0.0
    np.testing.assert_allclose(g.scores[0], np.linalg.norm(p.Wx[0], axis=0))
    doubled = global_importance(p.with_wx([2 * w for w in p.Wx]))
    np.testing.assert_allclose(doubled.flat(), 2 * g.flat())
    assert g.top(2)[0][2] >= g.top(2)[1][2]


def test_global_importance_ignores_fed_back_columns():
    t = StageTopology(K=2, nx=(3, 2), ny=(1, 1), nh=2, feed_prev_outputs=True)
    p = perturbed_params(t, 0)
    assert [s.size for s in global_importance(p).scores] == [3, 2]


def test_local_importance_definition(small_topology):
    p = perturbed_params(small_topology, 2)
    X, _ = random_batch(small_topology, 6, 2)
    rep = local_importance(p, X, (1, 0))
    g = input_gradient(p, forward(p, X), (1, 0))
    for k in range(3):
        np.testing.assert_allclose(rep.scores[k], np.mean(g[k] ** 2, axis=0))
    assert not rep.scores[2].any()
    one = local_importance(p, X, (1, 0), samples=[4])
    np.testing.assert_allclose(one.scores[0], g[0][4] ** 2)
    with pytest.raises(ValueError):
        local_importance(p, X, (1, 0), samples=[])


def test_local_importance_matches_true_linear_chain():
    spec = GeneratorSpec(K=3, nx=5, ny=2, nh_true=3, n_unimportant=1, sigma=0.0, n_samples=20, seed=4)
    d = generate(spec)
    tr = d.truth
    topo = StageTopology(K=3, nx=(5,) * 3, ny=(2,) * 3, nh=3)
    p = zeros_like_topology(topo)
    for k in range(3):
        p.Wx[k][...] = tr.Wx[k]
        p.Uh[k][0][...] = tr.Uh[k]
        p.bh[k][0][...] = tr.b[k]
        p.Vy[k][0][...] = tr.Wy[k]
    np.testing.assert_allclose(forward(p, d.X, activation=IDENTITY).yhat[2], d.Y[2], atol=1e-12)
    rep = local_importance(p, d.X, (2, 1), activation=IDENTITY)
    chain = tr.Wy[2][1] @ tr.Uh[2] @ tr.Uh[1] @ tr.Wx[0]
    np.testing.assert_allclose(rep.scores[0], chain**2, rtol=1e-12)
    assert rep.scores[0][-1] == 0.0
