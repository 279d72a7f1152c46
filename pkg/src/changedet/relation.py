"""Pre-subtraction feature enhancement between the two images.

Two sequential fusion stages per pyramid level. Stage one exchanges
information across the image pair (cross-attention); stage two lets each
enhanced map attend back to its own original feature
(cross-self-attention). Parameters are mirrored across the two image
paths, so swapping the inputs exactly swaps the outputs.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Module,
    Parameter,
    ShapeError,
    Tensor,
    matmul,
    reshape,
    softmax_rows,
    transpose,
)
from .layers import ConvNorm, projection_init


class AttentionProjections(Module):
    """Square channel projections producing queries, keys, and values."""

    def __init__(self, rng, channels: int, dtype=np.float32):
        super().__init__()
        self.w_q = Parameter(projection_init(rng, channels, dtype))
        self.w_k = Parameter(projection_init(rng, channels, dtype))
        self.w_v = Parameter(projection_init(rng, channels, dtype))


def attention(q: Tensor, k: Tensor, v: Tensor, scale: bool = False,
              return_weights: bool = False):
    """Row-stochastic attention weights from q k^T applied to v.

    Unscaled dot products by default; ``scale`` enables 1/sqrt(C) damping
    as an experiment toggle.
    """
    if q.shape != k.shape or k.shape != v.shape:
        raise ShapeError(f"attention operands disagree: {q.shape}, {k.shape}, {v.shape}")
    scores = matmul(q, transpose(k))
    if scale:
        scores = scores * (1.0 / np.sqrt(q.shape[1]))
    weights = softmax_rows(scores)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def fuse_tokens(f_i: Tensor, f_j: Tensor, proj_i: AttentionProjections,
                proj_j: AttentionProjections, scale: bool = False) -> Tensor:
    """Input + self-attention + cross-attention over token matrices T x C."""
    if f_i.shape != f_j.shape:
        raise ShapeError(f"fuse inputs disagree: {f_i.shape} vs {f_j.shape}")
    q_i = matmul(f_i, proj_i.w_q)
    k_i = matmul(f_i, proj_i.w_k)
    v_i = matmul(f_i, proj_i.w_v)
    k_j = matmul(f_j, proj_j.w_k)
    v_j = matmul(f_j, proj_j.w_v)
    self_term = attention(q_i, k_i, v_i, scale=scale)
    cross_term = attention(q_i, k_j, v_j, scale=scale)
    return f_i + self_term + cross_term


def to_tokens(x: Tensor) -> Tensor:
    c, h, w = x.shape
    return transpose(reshape(x, (c, h * w)))


def from_tokens(tokens: Tensor, hw: tuple[int, int]) -> Tensor:
    h, w = hw
    t, c = tokens.shape
    return reshape(transpose(tokens), (c, h, w))


class FusionStage(Module):
    """One attention fusion block: token fusion, then 3x3 conv + norm."""

    def __init__(self, rng, channels: int, scale: bool = False, dtype=np.float32):
        super().__init__()
        self.proj_i = AttentionProjections(rng, channels, dtype=dtype)
        self.proj_j = AttentionProjections(rng, channels, dtype=dtype)
        self.out = ConvNorm(rng, channels, channels, k=3, stride=1, act=False, dtype=dtype)
        self.scale = scale

    def __call__(self, f_i: Tensor, f_j: Tensor) -> Tensor:
        if f_i.shape != f_j.shape:
            raise ShapeError(f"fusion stage inputs disagree: {f_i.shape} vs {f_j.shape}")
        hw = f_i.shape[1:]
        fused = fuse_tokens(to_tokens(f_i), to_tokens(f_j), self.proj_i, self.proj_j,
                            scale=self.scale)
        return self.out(from_tokens(fused, hw))


class RelationAware(Module):
    """Both fusion stages for one pyramid level, mirrored across the pair."""

    def __init__(self, rng, channels: int, scale: bool = False, dtype=np.float32):
        super().__init__()
        self.cross = FusionStage(rng, channels, scale=scale, dtype=dtype)
        self.cross_self = FusionStage(rng, channels, scale=scale, dtype=dtype)

    def __call__(self, f_x: Tensor, f_y: Tensor) -> tuple[Tensor, Tensor]:
        x1 = self.cross(f_x, f_y)
        y1 = self.cross(f_y, f_x)
        x2 = self.cross_self(x1, f_x)
        y2 = self.cross_self(y1, f_y)
        return x2, y2
