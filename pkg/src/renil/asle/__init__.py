"""Any-scale Laplace estimator: network, losses, training and checkpoints."""

from .config import AsleConfig, TrainConfig
from .model import AsleNet, ModelDivergedError, Prediction, build_model

__all__ = ["AsleConfig", "TrainConfig", "AsleNet", "ModelDivergedError", "Prediction", "build_model"]
