"""Tensors, parameters and the tape that replays a forward pass backwards.

A Tensor wraps a numpy array (row-major, so shape and flat data agree by
construction). Operations in ops.py record themselves on a Tape when one is
passed in; Tape.backward walks the records in reverse execution order and
writes gradients into every Parameter reachable from the loss.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class Tensor:
    """Dense N-dimensional array plus an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        array = np.asarray(data, dtype=dtype)
        if array.dtype.kind != "f":
            array = array.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


class Parameter(Tensor):
    """A trainable tensor with a unique dotted name (e.g. block3.conv1.weight)."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=DEFAULT_DTYPE):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"


# Vector-Jacobian product: output gradient in, one gradient per input out
# (None for inputs that take no gradient).
Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Backward


class Tape:
    """Ordered record of executed operations.

    One tape covers one forward pass; it can be replayed once.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._spent = False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: Iterable[Tensor], backward: Backward) -> None:
        if self._spent:
            raise RuntimeError("tape was already replayed; record a new forward pass")
        self._records.append(_Record(output, tuple(inputs), backward))

    def backward(self, loss: Tensor, parameters: Optional[Iterable[Parameter]] = None) -> None:
        """Write d(loss)/d(p) into p.grad for every parameter.

        parameters lists the parameters to populate; ones the loss does not
        reach get a zero gradient. When omitted, every Parameter that appears
        on the tape is populated. Leaf tensors created with requires_grad
        also receive their gradient.
        """
        if self._spent:
            raise RuntimeError("tape was already replayed; record a new forward pass")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._spent = True

        produced = {id(r.output) for r in self._records}
        leaves: dict[int, Tensor] = {}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

        for rec in reversed(self._records):
            for tensor in rec.inputs:
                if tensor.requires_grad and id(tensor) not in produced:
                    leaves[id(tensor)] = tensor
            grad_out = grads.pop(id(rec.output), None)
            if grad_out is None:
                continue
            for tensor, grad_in in zip(rec.inputs, rec.backward(grad_out)):
                if grad_in is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad_in
                else:
                    grads[key] = grad_in

        for key, tensor in leaves.items():
            tensor.grad = grads.get(key, np.zeros_like(tensor.data)).astype(tensor.dtype, copy=False)
        for param in parameters or ():
            if id(param) not in leaves:
                param.grad = np.zeros_like(param.data)


def backward(tape: Tape, loss: Tensor, parameters: Optional[Iterable[Parameter]] = None) -> None:
    """Module-level alias for Tape.backward."""
    tape.backward(loss, parameters)


def requires_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)
