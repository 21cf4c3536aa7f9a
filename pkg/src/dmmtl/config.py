"""Run configuration for the command-line front end.

A run is described by one JSON object.  Every block is optional except
that exactly one of ``generator`` and ``data`` must be given::

    {
      "seed": 0,
      "out": "runs/case1",
      "model": "dmmtl",
      "generator": {"case_id": 1, "n_samples": 2000},
      "split": [0.6, 0.2, 0.2],
      "topology": {"nh": 40, "D1": 1, "D2": 1, "feed_prev_outputs": false},
      "train": {"lambda_x": 0.03, "epochs": 150},
      "tuning": {"trials": 8, "lambda_x": [0.001, 0.1], "nh": [10, 60]},
      "evaluate": {"levels": [0.2, 0.4, 0.5, 0.7], "thresholds": [0.05, 0.95, 0.05]},
      "explain": {"top": 3}
    }

Unknown keys anywhere are rejected.  The top-level ``seed`` feeds every
random component (generator, split, initialisation, shuffling, tuner).
"""

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

from dmmtl.data import GeneratorSpec
from dmmtl.errors import ConfigError
from dmmtl.losses import TrainConfig

MODEL_KINDS = ("dmmtl", "ridge", "lr", "en", "men")
TUNED_LOG = ("lambda_x", "lam", "gamma", "prox_step")


@dataclass(frozen=True)
class TopologyBlock:
    nh: int = 40
    D1: int = 1
    D2: int = 1
    feed_prev_outputs: bool = False


@dataclass(frozen=True)
class DataPaths:
    manifest: str
    data: str
    truth: Optional[str] = None


@dataclass(frozen=True)
class TuningBlock:
    trials: int = 8
    lambda_x: Optional[Tuple[float, float]] = None
    lam: Optional[Tuple[float, float]] = None
    gamma: Optional[Tuple[float, float]] = None
    prox_step: Optional[Tuple[float, float]] = None
    nh: Optional[Tuple[int, int]] = None
    seed: Optional[int] = None  # defaults to the run seed


@dataclass(frozen=True)
class EvaluateBlock:
    levels: Tuple[float, ...] = (0.2, 0.4, 0.5, 0.7)
    thresholds: Tuple[float, float, float] = (0.05, 0.95, 0.05)


@dataclass(frozen=True)
class ExplainBlock:
    top: int = 3


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "run"
    model: str = "dmmtl"
    generator: Optional[GeneratorSpec] = None
    data: Optional[DataPaths] = None
    split: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    topology: TopologyBlock = field(default_factory=TopologyBlock)
    train: TrainConfig = field(default_factory=TrainConfig)
    tuning: TuningBlock = field(default_factory=TuningBlock)
    evaluate: EvaluateBlock = field(default_factory=EvaluateBlock)
    explain: ExplainBlock = field(default_factory=ExplainBlock)

    def train_config(self):
        return self.train.replace(seed=self.seed)

    def to_dict(self):
        return asdict(self)


_BLOCKS = {
    "generator": GeneratorSpec,
    "data": DataPaths,
    "topology": TopologyBlock,
    "train": TrainConfig,
    "tuning": TuningBlock,
    "evaluate": EvaluateBlock,
    "explain": ExplainBlock,
}
# seeds live at the top level only
_HIDDEN = {"generator": {"seed"}, "train": {"seed"}}


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be an object")
    allowed = {f.name for f in fields(cls)} - _HIDDEN.get(where, set())
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid {where}: {err}") from None


def parse_config(doc, base_dir=None):
    """Validate a config object and turn it into a :class:`RunConfig`."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kw = {}
    for key, value in doc.items():
        if key in _BLOCKS:
            if value is None:
                continue
            kw[key] = _build(_BLOCKS[key], value, key)
        elif key == "split":
            if not isinstance(value, list) or len(value) != 3:
                raise ConfigError("split must be a list of three fractions")
            kw[key] = tuple(float(v) for v in value)
        else:
            kw[key] = value
    if not isinstance(kw.get("seed", 0), int) or isinstance(kw.get("seed", 0), bool):
        raise ConfigError("seed must be an integer")
    gen = kw.get("generator")
    if gen is not None:
        kw["generator"] = GeneratorSpec(**{**asdict(gen), "seed": kw.get("seed", 0)})
    if (gen is None) == (kw.get("data") is None):
        raise ConfigError("exactly one of 'generator' and 'data' must be given")
    if kw.get("model", "dmmtl") not in MODEL_KINDS:
        raise ConfigError(f"model must be one of {MODEL_KINDS}")
    if "data" in kw:
        kw["data"] = _resolve_paths(kw["data"], base_dir)
    if "tuning" in kw:
        _check_tuning(kw["tuning"])
    return RunConfig(**kw)


def _resolve_paths(paths, base_dir):
    base = Path(base_dir) if base_dir is not None else Path(".")
    out = {}
    for name in ("manifest", "data", "truth"):
        p = getattr(paths, name)
        if p is None:
            out[name] = None
            continue
        full = Path(p) if Path(p).is_absolute() else base / p
        if not full.exists():
            raise ConfigError(f"data.{name}: {full} does not exist")
        out[name] = str(full)
    return DataPaths(**out)


def _check_tuning(t):
    if not isinstance(t.trials, int) or t.trials < 1:
        raise ConfigError("tuning.trials must be a positive integer")
    for name in TUNED_LOG + ("nh",):
        r = getattr(t, name)
        if r is None:
            continue
        if len(r) != 2 or r[0] > r[1]:
            raise ConfigError(f"tuning.{name} must be [low, high] with low <= high")
        if name in TUNED_LOG and r[0] <= 0:
            raise ConfigError(f"tuning.{name} is searched on a log scale and needs positive bounds")
        if name == "nh" and (r[0] < 1 or int(r[0]) != r[0] or int(r[1]) != r[1]):
            raise ConfigError("tuning.nh bounds must be positive integers")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc, assignments):
    """Apply ``key=value`` overrides (dotted keys address blocks, values are JSON or bare strings)."""
    doc = copy.deepcopy(doc)
    for a in assignments:
        if "=" not in a:
            raise ConfigError(f"--set expects key=value, got {a!r}")
        key, value = a.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            child = node.get(p)
            if child is None:
                child = node[p] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"--set {key}: {p} is not a block")
            node = child
        node[parts[-1]] = _parse_value(value)
    return doc


def load_config(path=None, overrides=(), seed=None, out=None):
    """Read, override and validate a config file (``path=None`` starts from an empty object)."""
    doc = {}
    base_dir = None
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from None
        base_dir = Path(path).parent
    doc = apply_overrides(doc, overrides)
    if seed is not None:
        doc["seed"] = seed
    if out is not None:
        doc["out"] = out
    return parse_config(doc, base_dir)
