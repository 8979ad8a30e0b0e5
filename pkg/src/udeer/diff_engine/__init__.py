"""Reverse-mode automatic differentiation over dense float64 tensors."""

from udeer.diff_engine.tensor import Tape, Tensor, active_tape
from udeer.diff_engine.ops import (
    BCE_EPS,
    add,
    bce_masked,
    bilinear_upsample,
    concat_channels,
    conv2d,
    relu,
    scale,
    sigmoid,
)
from udeer.diff_engine.optim import SGD
from udeer.diff_engine.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "BCE_EPS",
    "SGD",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "bce_masked",
    "bilinear_upsample",
    "concat_channels",
    "conv2d",
    "load_checkpoint",
    "relu",
    "save_checkpoint",
    "scale",
    "sigmoid",
]
