"""Networks built from a NetworkSpec.

A quality network maps N x 3 x S x S images to N scores in (0, 1). A
recognizer maps them to (logits N x K, features N x D); the classifier
weight rows are the class centers used for labeling.
"""
from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from ..tensor import Parameter, Tape, Tensor
from ..tensor import ops
from .layers import (Activation, BatchNorm2d, Block, Conv2d, ConvBNReLU, GlobalAvgPool, Layer,
                     Linear, Shape)
from .specs import Normalization, NetworkSpec, recognizer_spec, tinyfqnet_spec

Trace = List[Tuple[str, Tuple[int, ...]]]


class Sequential(Layer):
    def __init__(self, name: str, layers: List[Layer]):
        self.name = name
        self.layers = layers

    def children(self):
        return self.layers


class Network(Layer):
    def __init__(self, spec: NetworkSpec, normalization: Optional[Normalization] = None,
                 metadata: Optional[dict] = None):
        self.spec = spec
        self.name = spec.kind
        self.normalization = normalization or Normalization()
        self.metadata: dict = dict(metadata or {})
        rng = np.random.default_rng(spec.seed)
        momentum, eps = spec.bn_momentum, spec.bn_eps

        self.stem = ConvBNReLU(
            Conv2d("stem.conv", spec.in_channels, spec.stem.out_channels, spec.stem.kernel, rng,
                   stride=spec.stem.stride, padding=spec.stem.kernel // 2),
            BatchNorm2d("stem.bn", spec.stem.out_channels, momentum, eps))
        self.blocks = [Block(f"block{i}", block, rng, spec.final_relu, momentum, eps)
                       for i, block in enumerate(spec.blocks, start=1)]

        channels = spec.last_channels
        stages: List[Tuple[str, Layer]] = [("stem", self.stem)]
        stages += [(block.name, block) for block in self.blocks]
        if spec.head.conv_channels:
            head_conv = ConvBNReLU(
                Conv2d("head.conv", channels, spec.head.conv_channels, 1, rng),
                BatchNorm2d("head.bn", spec.head.conv_channels, momentum, eps))
            stages.append(("head.conv", head_conv))
            channels = spec.head.conv_channels
        stages.append(("head.pool", GlobalAvgPool("head.pool")))

        if spec.kind == "quality":
            self.fc = Linear("head.fc", channels, 1, rng)
            stages.append(("head.fc", Sequential("head.fc", [self.fc, Activation("head.sigmoid", "sigmoid")])))
            self.embedding = self.classifier = None
        else:
            self.embedding = Linear("embedding", channels, spec.embedding_dim, rng)
            self.classifier = Linear("classifier", spec.embedding_dim, spec.num_classes, rng, bias=False)
            stages += [("embedding", self.embedding), ("classifier", self.classifier)]
        self.stages = stages

        names = [p.name for p in self.parameters()] + list(self.buffers())
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"duplicate tensor names in network: {duplicates}")

    @property
    def kind(self) -> str:
        return self.spec.kind

    def children(self):
        return [layer for _, layer in self.stages]

    def named_parameters(self) -> Dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def batchnorms(self) -> Iterator[BatchNorm2d]:
        for layer, _, _ in self.walk(self.input_shape):
            if isinstance(layer, BatchNorm2d):
                yield layer

    @property
    def input_shape(self) -> Shape:
        return (self.spec.in_channels, self.spec.input_size, self.spec.input_size)

    @property
    def class_ids(self) -> List[str]:
        if self.spec.class_ids is not None:
            return list(self.spec.class_ids)
        return [str(i) for i in range(self.spec.num_classes or 0)]

    def astype(self, dtype) -> "Network":
        """Cast parameters and running statistics in place (float64 for gradient checks)."""
        for param in self.parameters():
            param.data = param.data.astype(dtype)
            param.grad = np.zeros_like(param.data)
        for bn in self.batchnorms():
            bn.running_mean = bn.running_mean.astype(dtype)
            bn.running_var = bn.running_var.astype(dtype)
        return self

    @property
    def dtype(self):
        return self.stem.conv.weight.dtype

    def forward(self, x: Union[Tensor, np.ndarray], tape: Optional[Tape] = None,
                training: bool = False, trace: Optional[Trace] = None):
        """Quality: returns scores (N,). Recognizer: returns (logits N x K, features N x D)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ValueError(f"{self.kind} network expects N x {self.spec.in_channels} x H x W, "
                             f"got {x.shape}")
        features = None
        for name, stage in self.stages:
            x = stage.forward(x, tape, training)
            if name == "embedding":
                features = x
            if trace is not None:
                trace.append((name, x.shape))
        if self.kind == "quality":
            return ops.flatten(x, tape=tape)
        return x, features

    __call__ = forward


def build_tinyfqnet(input_size: int = 64, final_relu: bool = True, seed: int = 0,
                    bn_eps: float = 1e-5, bn_momentum: float = 0.9,
                    normalization: Optional[Normalization] = None) -> Network:
    return Network(tinyfqnet_spec(input_size, final_relu, seed, bn_eps, bn_momentum), normalization)


def build_recognizer(embedding_dim: int, num_classes: int, class_ids: Optional[List[str]] = None,
                     input_size: int = 64, final_relu: bool = True, seed: int = 0,
                     bn_eps: float = 1e-5, bn_momentum: float = 0.9,
                     normalization: Optional[Normalization] = None) -> Network:
    return Network(recognizer_spec(embedding_dim, num_classes, class_ids, input_size, final_relu,
                                   seed, bn_eps, bn_momentum), normalization)


def trace_shapes(network: Network, input_shape: Tuple[int, ...]) -> Trace:
    """Per-stage output shapes (batch dimension included) without running the network."""
    if len(input_shape) == 3:
        input_shape = (1,) + tuple(input_shape)
    batch, shape = input_shape[0], tuple(input_shape[1:])
    trace: Trace = []
    for name, stage in network.stages:
        shape = stage.out_shape(shape)
        trace.append((name, (batch,) + shape))
    return trace
