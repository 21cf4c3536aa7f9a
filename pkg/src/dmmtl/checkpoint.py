"""JSON checkpoints for trained models and their normalisation statistics.

One container format serves both the stage-chain model and the linear
baselines; ``kind`` tells them apart.  Floats go through ``repr`` so a
save/load round trip is bit-exact.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from dmmtl.baselines import LinearModel
from dmmtl.data import NormStats
from dmmtl.errors import DataError
from dmmtl.model import StageTopology, zeros_like_topology

FORMAT = "dmmtl-checkpoint/1"


@dataclass
class Checkpoint:
    kind: str  # "dmmtl" or a baseline kind ("ridge", "lr", "en", "men")
    model: Any  # ParameterSet, or a per-stage list of LinearModel lists
    stats: Optional[NormStats] = None
    epoch: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def topology(self):
        return self.model.topology if self.kind == "dmmtl" else None


def _arrs(seq):
    return [np.asarray(a).tolist() for a in seq]


def _stats_doc(st):
    if st is None:
        return None
    return {
        "x_mean": _arrs(st.x_mean),
        "x_std": _arrs(st.x_std),
        "y_mean": _arrs(st.y_mean),
        "y_std": _arrs(st.y_std),
        "flagged": [list(f) for f in st.flagged],
    }


def _stats_from(doc):
    if doc is None:
        return None

    def vecs(key):
        return [np.array(v, dtype=np.float64) for v in doc[key]]

    return NormStats(vecs("x_mean"), vecs("x_std"), vecs("y_mean"), vecs("y_std"), [tuple(f) for f in doc["flagged"]])


def _params_doc(p):
    return {"topology": p.topology.to_dict(), "arrays": {name: a.tolist() for name, a in p.named_arrays()}}


def _params_from(doc):
    topo = StageTopology.from_dict(doc["topology"])
    template = zeros_like_topology(topo)
    arrays = doc["arrays"]
    flat = []
    for name, a in template.named_arrays():
        if name not in arrays:
            raise DataError(f"checkpoint lacks array {name}")
        v = np.array(arrays[name], dtype=np.float64)
        if v.size != a.size:
            raise DataError(f"checkpoint array {name} has {v.size} entries, expected {a.size}")
        flat.append(v.ravel())
    return template.unflatten(np.concatenate(flat))


def _linear_doc(models):
    return [
        [
            {
                "coef": m.coef.tolist(),
                "intercept": m.intercept.tolist(),
                "kind": m.kind,
                "stage": m.stage,
                "feature_map": m.feature_map,
                "hyper": m.hyper,
            }
            for m in stage
        ]
        for stage in models
    ]


def _linear_from(doc):
    out = []
    for stage in doc:
        ms = []
        for d in stage:
            coef = np.array(d["coef"], dtype=np.float64)
            ms.append(
                LinearModel(coef.reshape(len(d["coef"]), -1), np.array(d["intercept"], dtype=np.float64), d["kind"], d["stage"], d["feature_map"], d["hyper"])
            )
        out.append(ms)
    return out


def save_checkpoint(path, ckpt):
    doc = {
        "format": FORMAT,
        "kind": ckpt.kind,
        "epoch": ckpt.epoch,
        "meta": ckpt.meta,
        "stats": _stats_doc(ckpt.stats),
        "model": _params_doc(ckpt.model) if ckpt.kind == "dmmtl" else _linear_doc(ckpt.model),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"{path}: cannot read checkpoint ({err})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise DataError(f"{path}: not a checkpoint file")
    kind = doc["kind"]
    model = _params_from(doc["model"]) if kind == "dmmtl" else _linear_from(doc["model"])
    return Checkpoint(kind, model, _stats_from(doc["stats"]), int(doc["epoch"]), doc.get("meta", {}))


def check_matches(ckpt, dataset):
    """Raise DataError when the checkpoint's stage widths differ from the dataset's."""
    if ckpt.kind == "dmmtl":
        t = ckpt.model.topology
        nx, ny = t.nx, t.ny
    else:
        nx = tuple(ckpt.meta.get("nx", ()))
        ny = tuple(ckpt.meta.get("ny", ()))
    if tuple(nx) != tuple(dataset.nx) or tuple(ny) != tuple(dataset.ny):
        raise DataError(f"checkpoint topology (nx={tuple(nx)}, ny={tuple(ny)}) does not match the dataset (nx={dataset.nx}, ny={dataset.ny})")
