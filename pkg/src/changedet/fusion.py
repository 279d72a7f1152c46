"""Cross-scale fusion block and the change classifier head.

The fusion block scores the anchor's query against each scale's key with
a full scalar reduction, normalizes the four scores into a ratio (not an
exponential softmax), and adds the weighted values on top of a skip
connection from the anchor. The head resizes the four fused maps to the
finest level, concatenates, maps to two logit channels, and applies a
per-pixel softmax, finally upsampling to the input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Module,
    Parameter,
    ShapeError,
    Tensor,
    bilinear_resize,
    concat,
    matmul,
    reshape,
    softmax_rows,
    tsum,
)
from .layers import Conv2d, projection_init
from .relation import from_tokens, to_tokens

SCORE_EPS = 1e-8


@dataclass
class FusedMap:
    level: int
    s: Tensor


@dataclass
class ProbabilityMap:
    """Per-pixel class distribution, channel 1 = changed."""

    p: Tensor  # shape (2, H, W)

    def change_prob(self) -> Tensor:
        _, h, w = self.p.shape
        from .autodiff import narrow

        return reshape(narrow(self.p, 0, 1, 1), (h, w))

    def predicted(self) -> np.ndarray:
        """Binary change map; ties resolve to unchanged."""
        return (self.p.data[1] > self.p.data[0]).astype(np.uint8)


class CtbProjections(Module):
    """One query projection for the anchor plus key/value pairs for all
    four inputs; everything stays at the anchor channel width."""

    def __init__(self, rng, channels: int, dtype=np.float32):
        super().__init__()
        self.w_q = Parameter(projection_init(rng, channels, dtype))
        for m in range(4):
            setattr(self, f"w_k{m}", Parameter(projection_init(rng, channels, dtype)))
            setattr(self, f"w_v{m}", Parameter(projection_init(rng, channels, dtype)))

    def keys(self) -> list[Parameter]:
        return [getattr(self, f"w_k{m}") for m in range(4)]

    def values(self) -> list[Parameter]:
        return [getattr(self, f"w_v{m}") for m in range(4)]


def ctb(anchor: Tensor, others: list[Tensor], proj: CtbProjections, level: int = 0,
        return_betas: bool = False):
    """Fuse the anchor with three same-size maps via scalar attention."""
    maps = [anchor] + list(others)
    if len(maps) != 4:
        raise ShapeError(f"fusion block needs 4 maps, got {len(maps)}")
    for m in maps[1:]:
        if m.shape != anchor.shape:
            raise ShapeError(f"fusion inputs disagree: {m.shape} vs anchor {anchor.shape}")

    hw = anchor.shape[1:]
    tokens = [to_tokens(m) for m in maps]
    q_a = matmul(tokens[0], proj.w_q)
    keys = [matmul(t, w) for t, w in zip(tokens, proj.keys())]
    values = [matmul(t, w) for t, w in zip(tokens, proj.values())]

    scores = [tsum(q_a * k) for k in keys]
    total = scores[0] + scores[1] + scores[2] + scores[3]
    fallback = abs(total.item()) <= SCORE_EPS
    if fallback:
        betas = [Tensor(np.asarray(0.25, dtype=anchor.dtype)) for _ in scores]
    else:
        denom = total + SCORE_EPS
        betas = [s / denom for s in scores]

    mixed = betas[0] * values[0]
    for beta, value in zip(betas[1:], values[1:]):
        mixed = mixed + beta * value
    fused = FusedMap(level, anchor + from_tokens(mixed, hw))
    if return_betas:
        return fused, betas, fallback
    return fused


class ClassifierHead(Module):
    """Concatenated fused maps -> 2-channel logits -> per-pixel softmax."""

    def __init__(self, rng, channels: tuple[int, int, int, int], dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(rng, sum(channels), 2, k=3, stride=1, dtype=dtype)

    def __call__(self, fused: list[FusedMap], out_size: tuple[int, int]) -> ProbabilityMap:
        if len(fused) != 4:
            raise ShapeError(f"classifier head needs 4 fused maps, got {len(fused)}")
        base_size = fused[0].s.shape[1:]
        stacked = [fused[0].s]
        for fm in fused[1:]:
            stacked.append(bilinear_resize(fm.s, base_size))
        logits = self.conv(concat(stacked, axis=0))
        h, w = logits.shape[1:]
        probs = softmax_rows(to_tokens(logits))
        p = from_tokens(probs, (h, w))
        if (h, w) != tuple(out_size):
            p = bilinear_resize(p, out_size)
        return ProbabilityMap(p)
