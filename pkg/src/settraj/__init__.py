"""settraj: masked set-attention models for multi-agent trajectory
forecasting, imputation, inference and per-frame game-state classification,
built on a small numpy reverse-mode autodiff core."""

from .errors import (
    ConfigError,
    DataError,
    EmptyMaskError,
    NumericsError,
    ShapeError,
    TaskViolationError,
)
from .model import ModelConfig, count_parameters, forward, init_params
from .harness import Checkpoint, TaskSpec, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "ConfigError", "DataError", "EmptyMaskError", "ModelConfig",
    "NumericsError", "ShapeError", "TaskSpec", "TaskViolationError",
    "TrainConfig", "count_parameters", "evaluate", "forward", "init_params",
    "train", "__version__",
]
