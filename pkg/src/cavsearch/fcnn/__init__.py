"""Minimal fully convolutional encoder-decoder with manual gradients."""

from .network import NetworkConfig, UNet
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

__all__ = [
    "NetworkConfig",
    "UNet",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "TrainConfig",
    "train",
]
