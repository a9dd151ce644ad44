"""Layers: parameter owners wrapping the tensor ops.

Shapes passed to out_shape()/walk() exclude the batch dimension: (C, H, W)
for feature maps, (D,) for vectors.
"""
from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..tensor import Parameter, Tape, Tensor
from ..tensor import ops
from ..tensor.core import DEFAULT_DTYPE
from .specs import BlockSpec

Shape = Tuple[int, ...]


class Layer:
    """Base class. Leaf layers override forward/out_shape; containers override children()."""

    name: str = ""

    def children(self) -> List["Layer"]:
        return []

    def own_parameters(self) -> List[Parameter]:
        return []

    def own_buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def parameters(self) -> List[Parameter]:
        params = list(self.own_parameters())
        for child in self.children():
            params.extend(child.parameters())
        return params

    def buffers(self) -> Dict[str, np.ndarray]:
        found = dict(self.own_buffers())
        for child in self.children():
            found.update(child.buffers())
        return found

    def out_shape(self, shape: Shape) -> Shape:
        for child in self.children():
            shape = child.out_shape(shape)
        return shape

    def walk(self, shape: Shape) -> Iterator[Tuple["Layer", Shape, Shape]]:
        """Yield (leaf layer, input shape, output shape) in execution order."""
        children = self.children()
        if not children:
            yield self, shape, self.out_shape(shape)
            return
        for child in children:
            yield from child.walk(shape)
            shape = child.out_shape(shape)

    def forward(self, x: Tensor, tape: Optional[Tape] = None, training: bool = False) -> Tensor:
        for child in self.children():
            x = child.forward(x, tape, training)
        return x


def kaiming(rng: np.random.Generator, shape: Shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(DEFAULT_DTYPE)


class Conv2d(Layer):
    def __init__(self, name: str, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0, groups: int = 1):
        if in_channels % groups or out_channels % groups:
            raise ValueError(f"{name}: {in_channels}->{out_channels} channels not divisible "
                             f"by groups={groups}")
        self.name = name
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding, self.groups = kernel, stride, padding, groups
        shape = (out_channels, in_channels // groups, kernel, kernel)
        fan_in = (in_channels // groups) * kernel * kernel
        self.weight = Parameter(kaiming(rng, shape, fan_in), f"{name}.weight")

    def own_parameters(self):
        return [self.weight]

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise ValueError(f"{self.name} expects {self.in_channels} channels, got shape {shape}")
        return (self.out_channels,
                ops.conv_output_size(h, self.kernel, self.stride, self.padding),
                ops.conv_output_size(w, self.kernel, self.stride, self.padding))

    def macs(self, shape: Shape) -> int:
        out_c, out_h, out_w = self.out_shape(shape)
        per_output = (self.in_channels // self.groups) * self.kernel * self.kernel
        return out_c * out_h * out_w * per_output

    def forward(self, x, tape=None, training=False):
        return ops.conv2d(x, self.weight, self.stride, self.padding, self.groups, tape=tape)


class BatchNorm2d(Layer):
    def __init__(self, name: str, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.name = name
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones(channels), f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels), f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=DEFAULT_DTYPE)
        self.running_var = np.ones(channels, dtype=DEFAULT_DTYPE)

    def own_parameters(self):
        return [self.gamma, self.beta]

    def own_buffers(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def out_shape(self, shape):
        if shape[0] != self.channels:
            raise ValueError(f"{self.name} expects {self.channels} channels, got shape {shape}")
        return shape

    def forward(self, x, tape=None, training=False):
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             training, self.momentum, self.eps, tape=tape)


class Activation(Layer):
    def __init__(self, name: str, kind: ops.Activation):
        self.name = name
        self.kind = kind

    def out_shape(self, shape):
        return shape

    def forward(self, x, tape=None, training=False):
        return ops.activation(x, self.kind, tape=tape)


class GlobalAvgPool(Layer):
    def __init__(self, name: str):
        self.name = name

    def out_shape(self, shape):
        return (shape[0],)

    def forward(self, x, tape=None, training=False):
        return ops.global_avgpool(x, tape=tape)


class Linear(Layer):
    def __init__(self, name: str, in_features: int, out_features: int,
                 rng: np.random.Generator, bias: bool = True):
        self.name = name
        self.in_features, self.out_features = in_features, out_features
        self.weight = Parameter(kaiming(rng, (out_features, in_features), in_features),
                                f"{name}.weight")
        self.bias = Parameter(np.zeros(out_features), f"{name}.bias") if bias else None

    def own_parameters(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def out_shape(self, shape):
        if shape != (self.in_features,):
            raise ValueError(f"{self.name} expects ({self.in_features},), got shape {shape}")
        return (self.out_features,)

    def macs(self, shape: Shape) -> int:
        return self.in_features * self.out_features

    def forward(self, x, tape=None, training=False):
        return ops.linear(x, self.weight, self.bias, tape=tape)


class ConvBNReLU(Layer):
    """conv -> batch norm -> optional ReLU, the unit every stage is built from."""

    def __init__(self, conv: Conv2d, bn: BatchNorm2d, relu: bool = True):
        self.name = conv.name.rsplit(".", 1)[0]
        self.conv, self.bn = conv, bn
        self.relu = Activation(f"{bn.name}.relu", "relu") if relu else None

    def children(self):
        return [self.conv, self.bn] + ([self.relu] if self.relu else [])


class ResidualAdd(Layer):
    """Marker leaf for the skip connection; forward happens in Block."""

    def __init__(self, name: str):
        self.name = name

    def out_shape(self, shape):
        return shape


class Block(Layer):
    """1x1 conv (in->expand), 3x3 depthwise (groups=expand, stride), 1x1 conv (expand->out).

    Each conv is followed by batch norm and ReLU (the last ReLU is optional,
    see NetworkSpec.final_relu). Residual blocks add the block input to the
    output after the last activation.
    """

    def __init__(self, name: str, spec: BlockSpec, rng: np.random.Generator,
                 final_relu: bool = True, momentum: float = 0.9, eps: float = 1e-5):
        if spec.residual and not spec.shape_preserving:
            raise ValueError(f"{name}: residual requested but {spec.in_channels}->"
                             f"{spec.out_channels} at stride {spec.stride} changes the shape")
        self.name = name
        self.spec = spec
        e = spec.expand_channels
        self.expand = ConvBNReLU(
            Conv2d(f"{name}.conv1", spec.in_channels, e, 1, rng),
            BatchNorm2d(f"{name}.bn1", e, momentum, eps))
        self.depthwise = ConvBNReLU(
            Conv2d(f"{name}.conv2", e, e, 3, rng, stride=spec.stride, padding=1, groups=e),
            BatchNorm2d(f"{name}.bn2", e, momentum, eps))
        self.project = ConvBNReLU(
            Conv2d(f"{name}.conv3", e, spec.out_channels, 1, rng),
            BatchNorm2d(f"{name}.bn3", spec.out_channels, momentum, eps),
            relu=final_relu)
        self.skip = ResidualAdd(f"{name}.add") if spec.residual else None

    def children(self):
        units = [self.expand, self.depthwise, self.project]
        return units + ([self.skip] if self.skip else [])

    def channel_trace(self) -> List[int]:
        return [self.spec.in_channels, self.spec.expand_channels,
                self.spec.expand_channels, self.spec.out_channels]

    def forward(self, x, tape=None, training=False):
        out = self.project.forward(
            self.depthwise.forward(self.expand.forward(x, tape, training), tape, training),
            tape, training)
        if self.skip is not None:
            out = ops.add(out, x, tape=tape)
        return out


def build_block(spec: BlockSpec, name: str = "block", rng: Optional[np.random.Generator] = None,
                final_relu: bool = True) -> Block:
    return Block(name, spec, rng if rng is not None else np.random.default_rng(0), final_relu)
