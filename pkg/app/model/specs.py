"""Declarative network descriptions.

A NetworkSpec is plain data: it is what the checkpoint header stores and
what Network() turns back into layers.
"""
from __future__ import annotations

from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class BlockSpec(BaseModel):
    """One inverted-bottleneck block: 1x1 expand, 3x3 depthwise, 1x1 project."""
    model_config = ConfigDict(frozen=True)

    in_channels: int = Field(ge=1)
    expand_channels: int = Field(ge=1)
    out_channels: int = Field(ge=1)
    stride: Literal[1, 2] = 1
    residual: bool = False

    @model_validator(mode="after")
    def check_residual_shape(self):
        if self.residual and (self.stride != 1 or self.in_channels != self.out_channels):
            raise ValueError(
                f"residual block needs stride 1 and in_channels == out_channels, got "
                f"{self.in_channels}->{self.out_channels} at stride {self.stride}")
        return self

    @property
    def shape_preserving(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels


class StemSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    out_channels: int = Field(ge=1)
    kernel: int = 3
    stride: int = 2


class HeadSpec(BaseModel):
    """conv_channels adds a 1x1 conv + BN + ReLU before pooling (the quality head)."""
    model_config = ConfigDict(frozen=True)

    conv_channels: Optional[int] = None


class Normalization(BaseModel):
    """Per-channel input normalization applied after scaling pixels to [0, 1]."""
    model_config = ConfigDict(frozen=True)

    mean: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: Tuple[float, float, float] = (0.5, 0.5, 0.5)

    @field_validator("std")
    @classmethod
    def check_std(cls, value):
        if any(s <= 0 for s in value):
            raise ValueError(f"normalization std must be positive, got {value}")
        return value


class NetworkSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["quality", "recognizer"]
    input_size: int = 64
    in_channels: int = 3
    stem: StemSpec
    blocks: List[BlockSpec]
    head: HeadSpec = HeadSpec()
    # Recognizer only: embedding width and the bias-free classifier.
    embedding_dim: Optional[int] = None
    num_classes: Optional[int] = None
    class_ids: Optional[List[str]] = None
    # ReLU after each block's final 1x1 conv (the default);
    # False gives MobileNetV2's linear bottleneck.
    final_relu: bool = True
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9
    seed: int = 0

    @model_validator(mode="after")
    def check_chain(self):
        channels = self.stem.out_channels
        for index, block in enumerate(self.blocks, start=1):
            if block.in_channels != channels:
                raise ValueError(
                    f"block{index} expects {block.in_channels} input channels but the "
                    f"previous stage produces {channels}")
            channels = block.out_channels
        if self.kind == "recognizer":
            if self.embedding_dim is None or self.embedding_dim < 2:
                raise ValueError("recognizer needs embedding_dim >= 2")
            if self.num_classes is None or self.num_classes < 2:
                raise ValueError("recognizer needs num_classes >= 2")
            if self.class_ids is not None and len(self.class_ids) != self.num_classes:
                raise ValueError(
                    f"recognizer has {self.num_classes} classes but {len(self.class_ids)} class ids")
        elif self.embedding_dim is not None or self.num_classes is not None:
            raise ValueError("quality networks have no embedding or classifier")
        return self

    @property
    def last_channels(self) -> int:
        return self.blocks[-1].out_channels if self.blocks else self.stem.out_channels


# tinyFQnet: stem 3x3x11 stride 2, then seven blocks. The two shape-preserving
# 11->11 blocks are the residual ones.
TINYFQNET_BLOCKS = [
    BlockSpec(in_channels=11, expand_channels=8, out_channels=2, stride=1),
    BlockSpec(in_channels=2, expand_channels=8, out_channels=5, stride=2),
    BlockSpec(in_channels=5, expand_channels=20, out_channels=5, stride=1),
    BlockSpec(in_channels=5, expand_channels=20, out_channels=11, stride=2),
    BlockSpec(in_channels=11, expand_channels=44, out_channels=11, stride=1, residual=True),
    BlockSpec(in_channels=11, expand_channels=44, out_channels=11, stride=1, residual=True),
    BlockSpec(in_channels=11, expand_channels=44, out_channels=22, stride=1),
]


def tinyfqnet_spec(input_size: int = 64, final_relu: bool = True, seed: int = 0,
                   bn_eps: float = 1e-5, bn_momentum: float = 0.9) -> NetworkSpec:
    return NetworkSpec(
        kind="quality",
        input_size=input_size,
        stem=StemSpec(out_channels=11),
        blocks=TINYFQNET_BLOCKS,
        head=HeadSpec(conv_channels=256),
        final_relu=final_relu,
        bn_eps=bn_eps,
        bn_momentum=bn_momentum,
        seed=seed,
    )


def recognizer_spec(embedding_dim: int, num_classes: int, class_ids: Optional[List[str]] = None,
                    input_size: int = 64, final_relu: bool = True, seed: int = 0,
                    bn_eps: float = 1e-5, bn_momentum: float = 0.9) -> NetworkSpec:
    """The desk-scale reference recognizer: same block vocabulary, wider channels."""
    blocks = [
        BlockSpec(in_channels=16, expand_channels=48, out_channels=24, stride=2),
        BlockSpec(in_channels=24, expand_channels=72, out_channels=24, stride=1, residual=True),
        BlockSpec(in_channels=24, expand_channels=96, out_channels=32, stride=2),
        BlockSpec(in_channels=32, expand_channels=128, out_channels=32, stride=1, residual=True),
    ]
    return NetworkSpec(
        kind="recognizer",
        input_size=input_size,
        stem=StemSpec(out_channels=16),
        blocks=blocks,
        embedding_dim=embedding_dim,
        num_classes=num_classes,
        class_ids=class_ids,
        final_relu=final_relu,
        bn_eps=bn_eps,
        bn_momentum=bn_momentum,
        seed=seed,
    )
