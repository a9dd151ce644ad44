"""Parameter, buffer and operation counts.

MACs cover convolutions and linear layers only: each output element costs
(in_channels / groups) * kh * kw multiply-accumulates for a conv and
in_features for a linear layer; flops are 2 * MACs. Everything else is
reported as elementwise operations: batch norm 2 per element (scale and
shift), activations and the residual add 1 per element, average pooling 1
per input element.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .layers import Activation, BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Linear, ResidualAdd
from .network import Network

BYTES_PER_VALUE = np.dtype(np.float32).itemsize


class FlopCount(NamedTuple):
    macs: int
    flops: int
    elementwise: int


@dataclass
class LayerCount:
    name: str
    kind: str
    input_shape: Tuple[int, ...]
    output_shape: Tuple[int, ...]
    params: int
    macs: int
    elementwise: int


@dataclass
class Footprint:
    params: int
    buffers: int
    param_bytes: int
    buffer_bytes: int
    activation_bytes: int
    macs: int
    flops: int
    elementwise: int

    def to_dict(self) -> dict:
        return asdict(self)


def count_params(layer: Layer) -> int:
    """Trainable element count. Batch norm contributes gamma and beta; running stats are buffers."""
    return int(sum(p.data.size for p in layer.parameters()))


def count_buffers(layer: Layer) -> int:
    return int(sum(b.size for b in layer.buffers().values()))


def _elementwise(layer: Layer, in_shape, out_shape) -> int:
    if isinstance(layer, BatchNorm2d):
        return 2 * int(np.prod(out_shape))
    if isinstance(layer, (Activation, ResidualAdd)):
        return int(np.prod(out_shape))
    if isinstance(layer, GlobalAvgPool):
        return int(np.prod(in_shape))
    return 0


def layer_counts(layer: Layer, input_shape: Optional[Tuple[int, ...]] = None) -> List[LayerCount]:
    """One row per leaf layer for a single image of input_shape (C, H, W)."""
    if input_shape is None:
        input_shape = layer.input_shape
    if len(input_shape) == 4:
        input_shape = tuple(input_shape[1:])
    rows = []
    for leaf, in_shape, out_shape in layer.walk(tuple(input_shape)):
        macs = leaf.macs(in_shape) if isinstance(leaf, (Conv2d, Linear)) else 0
        rows.append(LayerCount(
            name=leaf.name,
            kind=type(leaf).__name__,
            input_shape=in_shape,
            output_shape=out_shape,
            params=count_params(leaf),
            macs=macs,
            elementwise=_elementwise(leaf, in_shape, out_shape),
        ))
    return rows


def count_flops(layer: Layer, input_shape: Optional[Tuple[int, ...]] = None) -> FlopCount:
    """MACs, flops (2 * MACs) and elementwise ops for one image; a leading batch dim multiplies."""
    batch = input_shape[0] if input_shape is not None and len(input_shape) == 4 else 1
    rows = layer_counts(layer, input_shape)
    macs = batch * sum(r.macs for r in rows)
    elementwise = batch * sum(r.elementwise for r in rows)
    return FlopCount(macs=macs, flops=2 * macs, elementwise=elementwise)


def footprint(network: Network, input_shape: Optional[Tuple[int, ...]] = None) -> Footprint:
    """Memory and computation summary for one forward pass of a single image."""
    counts = count_flops(network, input_shape)
    rows = layer_counts(network, input_shape)
    params = count_params(network)
    buffers = count_buffers(network)
    return Footprint(
        params=params,
        buffers=buffers,
        param_bytes=params * BYTES_PER_VALUE,
        buffer_bytes=buffers * BYTES_PER_VALUE,
        activation_bytes=sum(int(np.prod(r.output_shape)) for r in rows) * BYTES_PER_VALUE,
        macs=counts.macs,
        flops=counts.flops,
        elementwise=counts.elementwise,
    )
