"""Tensorized networks: layers, training, checkpoints and preset architectures."""

from .arch import build_model, disentangled_model, with_circuits
from .layers import BatchNorm, CircuitLayer, Dense, Layer, MpoLayer, ReLU, Reshape
from .model import Model, count_params, cross_entropy
from .train import TrainConfig, TrainReport, evaluate, heal, train

__all__ = [
    "BatchNorm", "CircuitLayer", "Dense", "Layer", "Model", "MpoLayer", "ReLU", "Reshape",
    "TrainConfig", "TrainReport", "build_model", "count_params", "cross_entropy",
    "disentangled_model", "evaluate", "heal", "train", "with_circuits",
]
