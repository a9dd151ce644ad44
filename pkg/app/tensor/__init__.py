"""Minimal dense-tensor library: forward and backward for the layers tinyFQnet needs."""

from .core import Parameter, Tape, Tensor, backward
from .optim import SGD, sgd_step

__all__ = ["Parameter", "Tape", "Tensor", "backward", "SGD", "sgd_step"]
