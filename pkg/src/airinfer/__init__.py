"""Air quality inference at unmonitored stations via masked reconstruction."""

from .tensor import Tensor, parameter, grad_check
from .geo import StationSet, DartboardSpec, build_projection, haversine_km
from .model import ModelConfig, init_params, forward
from .train import TrainConfig, train_loop, evaluate, sample_mask, masked_l1

__all__ = [
    "Tensor", "parameter", "grad_check",
    "StationSet", "DartboardSpec", "build_projection", "haversine_km",
    "ModelConfig", "init_params", "forward",
    "TrainConfig", "train_loop", "evaluate", "sample_mask", "masked_l1",
]

__version__ = "0.1.0"
