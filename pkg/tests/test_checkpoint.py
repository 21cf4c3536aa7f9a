import numpy as np
import pytest

from dmmtl import baselines
from dmmtl.checkpoint import Checkpoint, check_matches, load_checkpoint, save_checkpoint
from dmmtl.data import GeneratorSpec, generate, split
from dmmtl.errors import DataError
from dmmtl.model import StageTopology

from conftest import perturbed_params


def test_dmmtl_round_trip_is_bit_exact(tmp_path):
    topo = StageTopology(K=2, nx=(3, 2), ny=(1, 2), nh=4, D1=2, D2=2, feed_prev_outputs=True)
    p = perturbed_params(topo, 0)
    tr, _, _ = split(generate(GeneratorSpec(K=2, nx=4, ny=2, nh_true=2, n_unimportant=1, n_samples=30)))
    save_checkpoint(tmp_path / "c.json", Checkpoint("dmmtl", p, tr.stats, 17, {"note": "x"}))
    ck = load_checkpoint(tmp_path / "c.json")
    assert ck.kind == "dmmtl" and ck.epoch == 17 and ck.meta == {"note": "x"}
    assert ck.topology == topo
    assert ck.model.flat().tobytes() == p.flat().tobytes()
    for a, b in zip(ck.stats.x_std, tr.stats.x_std):
        assert a.tobytes() == b.tobytes()


def test_baseline_round_trip(tmp_path):
    tr, va, te = split(generate(GeneratorSpec(K=2, nx=6, ny=2, nh_true=2, n_unimportant=1, n_samples=60)))
    models = baselines.fit_stagewise("men", tr, va, n_alphas=3)
    save_checkpoint(tmp_path / "b.json", Checkpoint("men", models, tr.stats, meta={"nx": list(tr.nx), "ny": list(tr.ny)}))
    ck = load_checkpoint(tmp_path / "b.json")
    for a, b in zip(baselines.predict_stagewise(ck.model, te.X), baselines.predict_stagewise(models, te.X)):
        assert a.tobytes() == b.tobytes()
    check_matches(ck, te)


def test_bad_checkpoints(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "nope"}')
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "x.json")
    (tmp_path / "y.json").write_text("{not json")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "y.json")


def test_topology_mismatch_is_detected():
    topo = StageTopology(K=2, nx=(3, 3), ny=(1, 1), nh=2)
    ck = Checkpoint("dmmtl", perturbed_params(topo, 0))
    d = generate(GeneratorSpec(K=2, nx=4, ny=1, nh_true=2, n_unimportant=1, n_samples=5))
    with pytest.raises(DataError, match="does not match"):
        check_matches(ck, d)
