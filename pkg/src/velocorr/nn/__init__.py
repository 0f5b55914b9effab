"""Minimal neural-network core: layers, masked BCE, Adam, checkpoints."""

from velocorr.nn.checkpoint import (
    CheckpointFormatError,
    CheckpointMismatchError,
    arch_digest,
    load_checkpoint,
    save_checkpoint,
)
from velocorr.nn.layers import (
    BiLSTM,
    Conv2d,
    FreqAvgPool,
    Linear,
    LSTM,
    ReLU,
    ShapeError,
    Sigmoid,
    sigmoid,
)
from velocorr.nn.loss import masked_bce
from velocorr.nn.optim import Adam, AdamConfig, NonFiniteGradientError

__all__ = [
    "Adam",
    "AdamConfig",
    "BiLSTM",
    "CheckpointFormatError",
    "CheckpointMismatchError",
    "Conv2d",
    "FreqAvgPool",
    "LSTM",
    "Linear",
    "NonFiniteGradientError",
    "ReLU",
    "ShapeError",
    "Sigmoid",
    "arch_digest",
    "load_checkpoint",
    "masked_bce",
    "save_checkpoint",
    "sigmoid",
]
