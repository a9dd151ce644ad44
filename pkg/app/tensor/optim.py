"""Stochastic gradient descent with momentum and L2 weight decay."""
from __future__ import annotations

from typing import Dict, Iterable

import numpy as np

from .core import Parameter


class SGD:
    """v <- momentum*v + grad + weight_decay*value; value <- value - lr*v.

    Velocities are keyed by parameter name, so the optimizer state survives
    a checkpoint round-trip of the network it drives.
    """

    def __init__(self, parameters: Iterable[Parameter], momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.parameters = list(parameters)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[str, np.ndarray] = {
            p.name: np.zeros_like(p.data) for p in self.parameters}

    def step(self, lr: float) -> None:
        sgd_step(self.parameters, lr, self.weight_decay, self.momentum, self.velocity)

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.zero_grad()


def sgd_step(params: Iterable[Parameter], lr: float, weight_decay: float, momentum: float,
             state: Dict[str, np.ndarray]) -> None:
    """Apply one in-place update to every parameter; state holds velocities by name."""
    for p in params:
        if p.grad is None or p.grad.shape != p.data.shape:
            raise ValueError(f"parameter {p.name} has no gradient matching {p.shape}")
        v = state.get(p.name)
        if v is None:
            v = np.zeros_like(p.data)
        v = momentum * v + p.grad + weight_decay * p.data
        state[p.name] = v.astype(p.dtype, copy=False)
        p.data -= (lr * state[p.name]).astype(p.dtype, copy=False)
