"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from .tensor import Tape, Tensor, zero_grad
from .ops import (
    add,
    conv2d,
    dense,
    dropout,
    flatten,
    relu,
    reshape,
    softmax_cross_entropy,
)
from .optim import AdamState, adam_init, adam_step

__all__ = [
    "Tape",
    "Tensor",
    "zero_grad",
    "add",
    "conv2d",
    "dense",
    "dropout",
    "flatten",
    "relu",
    "reshape",
    "softmax_cross_entropy",
    "AdamState",
    "adam_init",
    "adam_step",
]
