"""Weakly supervised seed generation with a shifted-window transformer.

A small numpy reverse-mode engine drives a hierarchical windowed-attention
encoder, a class activation head, hierarchical feature fusion and
prototype-based map refinement, trained from image-level labels only.
"""

__version__ = "0.1.0"

from .encoder import ModelConfig, TokenGrid, encode
from .estimator import SeedCAMClassifier
from .exceptions import (
    ConfigurationError,
    DimensionError,
    GenerationError,
    IncompatibleError,
    NumericError,
)
from .model import ForwardOutput, forward, init_params, predict_maps
from .tensor import Tensor, grad_check, no_grad
from .train import TrainConfig, train

__all__ = [
    "ConfigurationError",
    "DimensionError",
    "ForwardOutput",
    "GenerationError",
    "IncompatibleError",
    "ModelConfig",
    "NumericError",
    "SeedCAMClassifier",
    "Tensor",
    "TokenGrid",
    "TrainConfig",
    "encode",
    "forward",
    "grad_check",
    "init_params",
    "no_grad",
    "predict_maps",
    "train",
]
