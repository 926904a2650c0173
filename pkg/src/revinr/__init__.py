"""Uncertainty-aware implicit neural representations of volumetric scalar fields."""

__version__ = "0.1.0"

from .estimators import DetINR, MCDINR, REVINR, RMDINR, load_model, make_model  # noqa: E402
from .models import ModelConfig, PredictionField  # noqa: E402
from .training import TrainConfig, train  # noqa: E402
from .volume import VolumeGrid, load_raw, normalize  # noqa: E402

__all__ = [
    "DetINR",
    "REVINR",
    "MCDINR",
    "RMDINR",
    "ModelConfig",
    "PredictionField",
    "TrainConfig",
    "VolumeGrid",
    "load_model",
    "load_raw",
    "make_model",
    "normalize",
    "train",
]
