"""Post-subtraction cross-scale channel gating.

Each level derives a sigmoid channel gate from its own difference map;
every level's difference map is then resized to the target level, passed
through a per-(target, source) 1x1 conv, and gated channelwise. The
same-level case uses the identity resize so the fusion block downstream
always receives four maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Module,
    ModuleList,
    ShapeError,
    Tensor,
    bilinear_resize,
    global_avg_pool,
    reshape,
    sigmoid,
    tabs,
)
from .layers import Conv2d


@dataclass
class DifferenceMap:
    """Elementwise absolute difference of the enhanced level-n features."""

    level: int
    map: Tensor


@dataclass
class ChannelGate:
    level: int
    u: Tensor  # shape (C,), entries strictly inside (0, 1)


def difference(f_x: Tensor, f_y: Tensor, level: int) -> DifferenceMap:
    if f_x.shape != f_y.shape:
        raise ShapeError(f"difference inputs disagree: {f_x.shape} vs {f_y.shape}")
    return DifferenceMap(level, tabs(f_x - f_y))


class ScaleAware(Module):
    """Gate derivation plus the (target, source) resize-and-project grid.

    ``enabled`` mirrors the ablation switch: when off, the gate multiply is
    skipped and maps are only resized and channel-matched.
    """

    def __init__(self, rng, channels: tuple[int, int, int, int], enabled: bool = True,
                 dtype=np.float32):
        super().__init__()
        self.channels = tuple(channels)
        self.enabled = enabled
        if enabled:
            self.gate_convs = ModuleList(
                [Conv2d(rng, c, c, k=1, stride=1, dtype=dtype) for c in channels])
        # the resize-path projections stay bias-free so reweighting is
        # linear in the difference map
        pairs = []
        for c_target in channels:
            pairs.append(ModuleList(
                [Conv2d(rng, c_source, c_target, k=1, stride=1, use_bias=False, dtype=dtype)
                 for c_source in channels]))
        self.pair_convs = ModuleList(pairs)

    def channel_gate(self, diff: DifferenceMap) -> ChannelGate:
        pooled = global_avg_pool(diff.map)
        c = pooled.shape[0]
        conv = self.gate_convs[diff.level - 1]
        logits = conv(reshape(pooled, (c, 1, 1)))
        return ChannelGate(diff.level, reshape(sigmoid(logits), (c,)))

    def reweight(self, d_m: DifferenceMap, gate: ChannelGate | None, target_level: int,
                 target_size: tuple[int, int]) -> Tensor:
        if gate is not None and gate.level != target_level:
            raise ShapeError(
                f"gate belongs to level {gate.level}, reweight targets level {target_level}")
        conv = self.pair_convs[target_level - 1][d_m.level - 1]
        resized = bilinear_resize(d_m.map, target_size)
        projected = conv(resized)
        if gate is None:
            return projected
        c = gate.u.shape[0]
        return projected * reshape(gate.u, (c, 1, 1))

    def forward_level(self, target: int, diffs: list[DifferenceMap]) -> tuple[list[Tensor], ChannelGate | None]:
        """All four reweighted maps for one target level."""
        target_map = diffs[target - 1]
        gate = self.channel_gate(target_map) if self.enabled else None
        size = target_map.map.shape[1:]
        maps = [self.reweight(d, gate, target, size) for d in diffs]
        return maps, gate
