"""Stage-chained latent-state multi-task regression for multistage manufacturing."""

from dmmtl.errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DivergenceError,
    ShapeError,
)
from dmmtl.model import ForwardTrace, ParameterSet, StageTopology, forward, init_params, predict

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "DivergenceError",
    "ForwardTrace",
    "ParameterSet",
    "ShapeError",
    "StageTopology",
    "forward",
    "init_params",
    "predict",
]
