import numpy as np
import pytest
from scipy.optimize import minimize

from dmmtl.data import GeneratorSpec, generate, split
from dmmtl.errors import DivergenceError
from dmmtl.gradients import backward
from dmmtl.losses import TrainConfig, full_objective
from dmmtl.model import StageTopology, forward, init_params
from dmmtl.optimizer import prox_update_wx, sgd_step, train, train_iteration, update_outliers

from conftest import perturbed_params, random_batch


def tiny_data(n=40, seed=0, **kw):
    spec = GeneratorSpec(case_id=1, K=2, nx=6, ny=2, nh_true=2, n_unimportant=2, n_samples=n, seed=seed, **kw)
    return split(generate(spec), seed=seed)


def test_update_outliers_examples():
    a = update_outliers([np.array([0.3, 0.7, -2.0])], gamma=1.0)[0]
    np.testing.assert_allclose(a, [0.0, 0.2, -1.5])
    with pytest.raises(ValueError):
        update_outliers([np.zeros(2)], gamma=0.0)


def test_prox_examples():
    cfg = TrainConfig(lambda_x=1.0, lam=0.0, prox_step=1.0)
    w = np.array([[3.0, 0.1], [4.0, 0.1]])
    out = prox_update_wx([w], [np.zeros_like(w)], cfg)[0]
    np.testing.assert_allclose(out[:, 0], [2.4, 3.2])
    assert np.all(out[:, 1] == 0.0)
    # zero penalties: plain gradient step
    cfg = TrainConfig(lambda_x=0.0, lam=0.0, prox_step=0.5)
    g = np.ones_like(w)
    np.testing.assert_allclose(prox_update_wx([w], [g], cfg)[0], w - 0.5)


def test_prox_matches_numerical_surrogate_minimiser():
    rng = np.random.default_rng(11)
    for trial in range(100):
        dim = int(rng.integers(2, 6))
        w0, g = rng.normal(size=dim), rng.normal(size=dim)
        L = rng.uniform(1.0, 10.0)
        lam, lx = rng.uniform(0, 0.5), rng.uniform(0, 2.0)
        cfg = TrainConfig(lambda_x=lx, lam=lam, prox_step=1.0 / L)

        def surrogate(w):
            d = w - w0
            return g @ d + 0.5 * L * d @ d + 0.5 * lam * w @ w + lx * np.linalg.norm(w)

        got = prox_update_wx([w0[:, None]], [g[:, None]], cfg)[0][:, 0]
        best = min(
            (minimize(surrogate, s, method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-14, "maxiter": 40000}) for s in (w0, np.full(dim, 1e-3))),
            key=lambda r: r.fun,
        )
        assert np.linalg.norm(got - best.x) <= 1e-4
        assert surrogate(got) <= best.fun + 1e-10


def test_sgd_step_leaves_wx_alone(small_topology):
    p = perturbed_params(small_topology, 0)
    g = p.map(np.ones_like)
    q = sgd_step(p, g, 0.1, lam=0.5)
    for a, b in zip(p.Wx, q.Wx):
        assert a is b
    np.testing.assert_allclose(q.Uh[0][0], p.Uh[0][0] - 0.1 * (1 + 0.5 * p.Uh[0][0]))
    with pytest.raises(ValueError):
        sgd_step(p, g, 0.0)


def test_huge_group_penalty_zeroes_every_column():
    tr, va, _ = tiny_data()
    cfg = TrainConfig(lambda_x=1e3, epochs=3, batch_size=8)
    params, _ = train(tr, tr.stage_topology(4), cfg)
    assert all(np.all(w == 0.0) for w in params.Wx)


def test_no_group_penalty_leaves_columns_nonzero():
    tr, va, _ = tiny_data()
    params, _ = train(tr, tr.stage_topology(4), TrainConfig(lambda_x=0.0, epochs=3, batch_size=8))
    assert all(np.all(np.linalg.norm(w, axis=0) > 0) for w in params.Wx)


@pytest.mark.parametrize("loss_kind", ["sse", "huber"])
def test_full_batch_objective_is_monotone(loss_kind):
    tr, _, _ = tiny_data(n=30)
    cfg = TrainConfig(
        lambda_x=0.05, lam=1e-3, loss_kind=loss_kind, gamma=1.0, prox_step=0.01, sgd_step=0.01,
        batch_size=tr.n_samples, backtrack=False,
    )
    topo = tr.stage_topology(3)
    params = init_params(topo, 0)
    prev = full_objective(params, tr.X, tr.Y, cfg)
    for _ in range(60):
        params, _ = train_iteration(params, tr.X, tr.Y, cfg)
        cur = full_objective(params, tr.X, tr.Y, cfg)
        assert cur <= prev + 1e-9
        prev = cur


@pytest.mark.parametrize("lam", [0.0, 0.01])
def test_reduces_to_plain_gradient_descent(lam):
    tr, _, _ = tiny_data(n=20)
    L = 20.0
    cfg = TrainConfig(lambda_x=0.0, lam=lam, prox_step=1.0 / L, sgd_step=1.0 / L, batch_size=tr.n_samples, epochs=5, backtrack=False)
    topo = tr.stage_topology(3)
    ref = init_params(topo, cfg.seed)
    n = tr.n_samples
    for _ in range(cfg.epochs):
        trace = forward(ref, tr.X, tr.Y)
        g = backward(ref, trace, [2.0 * (yh - y) / n for yh, y in zip(trace.yhat, tr.Y)])
        # Wx sees the L2 term through its proximal map, everything else explicitly
        new = ref.map(lambda t, gt: t - (gt + lam * t) / L, g)
        ref = new.with_wx([(w - gw / L) / (1 + lam / L) for w, gw in zip(ref.Wx, g.Wx)])
    got, _ = train(tr, topo, cfg)
    np.testing.assert_allclose(got.flat(), ref.flat(), rtol=0, atol=1e-10)


def test_training_is_deterministic():
    tr, va, _ = tiny_data(n=60)
    cfg = TrainConfig(epochs=4, batch_size=8)
    a, ra = train(tr, tr.stage_topology(3), cfg, val=va)
    b, rb = train(tr, tr.stage_topology(3), cfg, val=va)
    assert a.flat().tobytes() == b.flat().tobytes()
    assert ra == rb


def test_divergence_is_reported():
    tr, _, _ = tiny_data()
    cfg = TrainConfig(prox_step=1e300, sgd_step=1e300, epochs=5, batch_size=8, lambda_x=0.0, lam=0.0)
    with pytest.raises(DivergenceError) as err:
        with np.errstate(all="ignore"):
            train(tr, tr.stage_topology(3), cfg)
    assert err.value.epoch >= 1


def test_restart_when_validation_is_hopeless():
    tr, va, _ = tiny_data(n=60)
    # shift the validation targets so every model looks worse than the mean predictor
    from dataclasses import replace

    bad = replace(va, Y=[y + 50.0 for y in va.Y])
    cfg = TrainConfig(epochs=8, batch_size=8, restart_patience=2, max_restarts=2)
    _, rep = train(tr, tr.stage_topology(3), cfg, val=bad)
    assert rep.restarts == 2


def test_report_records_and_resume_numbering():
    tr, va, _ = tiny_data(n=60)
    cfg = TrainConfig(epochs=3, batch_size=16)
    seen = []
    p, rep = train(tr, tr.stage_topology(3), cfg, val=va, callback=seen.append)
    assert [r["epoch"] for r in rep.records()] == [1, 2, 3] == [r["epoch"] for r in seen]
    _, rep2 = train(tr, tr.stage_topology(3), cfg, val=va, init=p, start_epoch=3)
    assert [r["epoch"] for r in rep2.records()] == [4, 5, 6]


def test_train_rejects_bad_inputs():
    tr, _, _ = tiny_data()
    with pytest.raises(ValueError):
        train(tr.subset([]), tr.stage_topology(3), TrainConfig())
    wrong = StageTopology(K=2, nx=(5, 6), ny=(2, 2), nh=3)
    with pytest.raises(ValueError):
        train(tr, wrong, TrainConfig())
