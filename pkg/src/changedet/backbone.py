"""Siamese feature extractor: a small residual pyramid at desk scale.

Four stages of basic residual blocks produce the last-four-stage feature
maps; the final two stages keep stride 1 so levels 2..4 share a spatial
size. Each level then passes through a 1x1 reduction conv + norm to the
configured channel widths. Both images of a pair share one weight set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Module, ModuleList, Tensor, relu
from .config import ConfigError
from .layers import Conv2d, ConvNorm, GroupNorm

BASE_WIDTHS = (64, 128, 256, 512)


def scaled_widths(width_factor: float, base=BASE_WIDTHS) -> tuple[int, ...]:
    return tuple(max(1, round(b * width_factor)) for b in base)


@dataclass
class FeaturePyramid:
    """Per-image feature maps, coarse to fine: level 1 at 1/4 input size,
    levels 2..4 at 1/8."""

    levels: list[Tensor]

    def __post_init__(self):
        if len(self.levels) != 4:
            raise ConfigError(f"pyramid needs exactly 4 levels, got {len(self.levels)}")

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(level.shape[0] for level in self.levels)

    @property
    def sizes(self) -> tuple[tuple[int, int], ...]:
        return tuple(level.shape[1:] for level in self.levels)


class BasicBlock(Module):
    """Two 3x3 convs with a shortcut; output = relu(branch + shortcut)."""

    def __init__(self, rng, c_in: int, c_out: int, stride: int = 1, dtype=np.float32):
        super().__init__()
        self.conv1 = ConvNorm(rng, c_in, c_out, k=3, stride=stride, act=True, dtype=dtype)
        self.conv2 = ConvNorm(rng, c_out, c_out, k=3, stride=1, act=False, dtype=dtype)
        self.project = None
        if stride != 1 or c_in != c_out:
            self.project = ConvNorm(rng, c_in, c_out, k=1, stride=stride, act=False, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        branch = self.conv2(self.conv1(x))
        shortcut = x if self.project is None else self.project(x)
        return relu(branch + shortcut)


class Backbone(Module):
    """Shared-weight pyramid extractor.

    stage_strides defaults to (2, 2, 1, 1); with the stride-2 stem the
    total downsampling factor is stem * prod(strides) = 8, and inputs must
    be divisible by it.
    """

    def __init__(self, rng, width_factor: float = 0.125,
                 stage_depths: tuple[int, ...] = (2, 2, 2, 2),
                 stage_strides: tuple[int, ...] = (2, 2, 1, 1),
                 dtype=np.float32):
        super().__init__()
        if len(stage_depths) != 4 or len(stage_strides) != 4:
            raise ConfigError("backbone needs exactly 4 stage depths and strides")
        if any(d < 1 for d in stage_depths):
            raise ConfigError(f"stage depths must be positive, got {stage_depths}")
        widths = scaled_widths(width_factor)
        self.widths = widths
        self.stem_stride = 2
        self.downsample_factor = self.stem_stride * int(np.prod(stage_strides))

        self.stem = ConvNorm(rng, 3, widths[0], k=3, stride=self.stem_stride,
                             act=True, dtype=dtype)
        stages = []
        c_prev = widths[0]
        for width, depth, stride in zip(widths, stage_depths, stage_strides):
            blocks = [BasicBlock(rng, c_prev, width, stride=stride, dtype=dtype)]
            for _ in range(depth - 1):
                blocks.append(BasicBlock(rng, width, width, stride=1, dtype=dtype))
            stages.append(ModuleList(blocks))
            c_prev = width
        self.stages = ModuleList(stages)

        reducers = []
        for width in widths:
            reducers.append(ReduceLevel(rng, width, width, dtype=dtype))
        self.reduce = ModuleList(reducers)

    def check_input(self, shape: tuple) -> None:
        if len(shape) != 3 or shape[0] != 3:
            raise ConfigError(f"backbone expects a 3xHxW image, got shape {shape}")
        _, h, w = shape
        f = self.downsample_factor
        if h % f or w % f:
            raise ConfigError(
                f"spatial size {h}x{w} is not divisible by the downsampling factor {f}")

    def extract(self, image: Tensor) -> FeaturePyramid:
        self.check_input(image.shape)
        x = self.stem(image)
        levels = []
        for stage, reducer in zip(self.stages, self.reduce):
            for block in stage:
                x = block(x)
            levels.append(reducer(x))
        return FeaturePyramid(levels)

    def __call__(self, image: Tensor) -> FeaturePyramid:
        return self.extract(image)


class ReduceLevel(Module):
    """1x1 channel reduction followed by normalization (no activation)."""

    def __init__(self, rng, c_in: int, c_out: int, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(rng, c_in, c_out, k=1, stride=1, dtype=dtype)
        self.norm = GroupNorm(c_out, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.norm(self.conv(x))
