"""A small numpy neural-network engine with exact reverse-mode gradients."""

from .layers import (
    ConcatSkip,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool2,
    ReLU,
    ShapeError,
    Sigmoid,
    Softmax,
    Upsample2,
    layer_from_spec,
)
from .losses import bce_dice_loss, cce_loss, soft_dice
from .network import Gradients, Network, Trace
from .optim import AdamState, TrainConfig, adam_step
from .train import fit_network

__all__ = [
    "AdamState", "ConcatSkip", "Conv2D", "Dense", "Dropout", "Flatten", "Gradients", "Layer",
    "MaxPool2", "Network", "ReLU", "ShapeError", "Sigmoid", "Softmax", "Trace", "TrainConfig",
    "Upsample2", "adam_step", "bce_dice_loss", "cce_loss", "fit_network", "layer_from_spec",
    "soft_dice",
]
