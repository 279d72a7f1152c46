"""Conv / normalization building blocks shared by the network modules."""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Module,
    Parameter,
    Tensor,
    conv2d,
    relu,
    reshape,
    sqrt,
    tmean,
)


def kernel_init(rng: np.random.Generator, shape: tuple, dtype) -> np.ndarray:
    """Zero-mean Gaussian scaled by fan-in."""
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def projection_init(rng: np.random.Generator, c: int, dtype) -> np.ndarray:
    std = np.sqrt(1.0 / c)
    return (rng.standard_normal((c, c)) * std).astype(dtype)


class Conv2d(Module):
    """k x k convolution layer; padding defaults to size-preserving for stride 1."""

    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 1,
                 padding: int | None = None, use_bias: bool = True, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = (k // 2) if padding is None else padding
        self.kernel = Parameter(kernel_init(rng, (c_out, c_in, k, k), dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if use_bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias, stride=self.stride, padding=self.padding)


def num_norm_groups(channels: int, max_group_size: int = 8) -> int:
    """Smallest group count dividing ``channels`` with groups of at most
    ``max_group_size`` channels."""
    groups = max(1, -(-channels // max_group_size))
    while channels % groups:
        groups += 1
    return groups


class GroupNorm(Module):
    """Per-sample group normalization; works at batch size 1."""

    def __init__(self, channels: int, max_group_size: int = 8, eps: float = 1e-5,
                 dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.groups = num_norm_groups(channels, max_group_size)
        self.eps = eps
        self.gamma = Parameter(np.ones((channels, 1, 1), dtype=dtype))
        self.beta = Parameter(np.zeros((channels, 1, 1), dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        g = self.groups
        grouped = reshape(x, (g, (c // g) * h * w))
        mu = tmean(grouped, axis=1, keepdims=True)
        centered = grouped - mu
        var = tmean(centered * centered, axis=1, keepdims=True)
        normed = centered / sqrt(var + self.eps)
        return reshape(normed, (c, h, w)) * self.gamma + self.beta


class ConvNorm(Module):
    """Conv2d followed by GroupNorm, optionally ReLU."""

    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 1,
                 act: bool = False, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(rng, c_in, c_out, k=k, stride=stride, dtype=dtype)
        self.norm = GroupNorm(c_out, dtype=dtype)
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        out = self.norm(self.conv(x))
        return relu(out) if self.act else out
