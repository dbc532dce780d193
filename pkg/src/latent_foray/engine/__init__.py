"""Tensor engine: reverse-mode autodiff, op catalog, Adam, gradient checks."""

from . import ops
from .gradcheck import finite_difference_check
from .optim import AdamState, adam_step
from .tensor import GradientBuffers, Node, Tape, Tensor, active_tape, constant, no_grad

__all__ = [
    "AdamState",
    "GradientBuffers",
    "Node",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "constant",
    "finite_difference_check",
    "no_grad",
    "ops",
]
