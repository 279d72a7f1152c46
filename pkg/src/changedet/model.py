"""End-to-end change detection network.

Wiring per forward pass: shared-backbone pyramid extraction for both
images, per-level relation-aware enhancement, absolute difference,
scale-aware gating of every (target, source) level pair, per-level
cross-scale fusion, and the classifier head producing a per-pixel
two-class probability map at input resolution.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Module, ModuleList, NumericError, ShapeError, Tensor
from .backbone import Backbone
from .fusion import ClassifierHead, CtbProjections, FusedMap, ProbabilityMap, ctb
from .relation import RelationAware
from .scale import DifferenceMap, ScaleAware, difference


class ChangeDetector(Module):
    """Siamese change detector with relation/scale/fusion toggles."""

    def __init__(self, seed: int = 0, width_factor: float = 0.125,
                 stage_depths: tuple[int, ...] = (2, 2, 2, 2),
                 stage_strides: tuple[int, ...] = (2, 2, 1, 1),
                 use_relation: bool = True, use_scale: bool = True,
                 use_fusion: bool = True, attention_scaling: bool = False,
                 dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.use_relation = use_relation
        self.use_scale = use_scale
        self.use_fusion = use_fusion

        self.backbone = Backbone(rng, width_factor=width_factor,
                                 stage_depths=stage_depths,
                                 stage_strides=stage_strides, dtype=dtype)
        widths = self.backbone.widths

        if use_relation:
            self.relation = ModuleList(
                [RelationAware(rng, c, scale=attention_scaling, dtype=dtype)
                 for c in widths])
        self.scale_aware = ScaleAware(rng, widths, enabled=use_scale, dtype=dtype)
        if use_fusion:
            self.ctb_projs = ModuleList(
                [CtbProjections(rng, c, dtype=dtype) for c in widths])
        self.head = ClassifierHead(rng, widths, dtype=dtype)
        self.assign_names()

    def _prepare(self, image) -> Tensor:
        if isinstance(image, Tensor):
            if image.data.dtype != self.dtype:
                return Tensor(image.data.astype(self.dtype))
            return image
        return Tensor(np.asarray(image, dtype=self.dtype))

    def forward(self, x, y) -> ProbabilityMap:
        prob, _ = self.forward_trace(x, y)
        return prob

    def forward_trace(self, x, y) -> tuple[ProbabilityMap, dict]:
        """Forward pass returning every intermediate for inspection."""
        x = self._prepare(x)
        y = self._prepare(y)
        if x.shape != y.shape:
            raise ShapeError(f"image pair shapes disagree: {x.shape} vs {y.shape}")
        self.backbone.check_input(x.shape)
        out_size = x.shape[1:]

        pyr_x = self.backbone.extract(x)
        pyr_y = self.backbone.extract(y)

        enhanced_x, enhanced_y = [], []
        for n in range(4):
            if self.use_relation:
                ex, ey = self.relation[n](pyr_x.levels[n], pyr_y.levels[n])
            else:
                ex, ey = pyr_x.levels[n], pyr_y.levels[n]
            enhanced_x.append(ex)
            enhanced_y.append(ey)

        diffs = [difference(enhanced_x[n], enhanced_y[n], n + 1) for n in range(4)]

        gates, reweighted, fused, betas = [], [], [], []
        for n in range(1, 5):
            maps, gate = self.scale_aware.forward_level(n, diffs)
            gates.append(gate)
            reweighted.append(maps)
            anchor = maps[n - 1]
            others = [maps[m] for m in range(4) if m != n - 1]
            if self.use_fusion:
                fm, level_betas, fallback = ctb(anchor, others, self.ctb_projs[n - 1],
                                                level=n, return_betas=True)
                betas.append({"values": [b.item() for b in level_betas],
                              "fallback": fallback})
            else:
                fm = FusedMap(n, anchor)
                betas.append(None)
            fused.append(fm)

        prob = self.head(fused, out_size)
        if not np.all(np.isfinite(prob.p.data)):
            raise NumericError("forward pass produced non-finite probabilities")

        trace = {
            "pyramid_x": pyr_x,
            "pyramid_y": pyr_y,
            "enhanced_x": enhanced_x,
            "enhanced_y": enhanced_y,
            "diffs": diffs,
            "gates": gates,
            "reweighted": reweighted,
            "betas": betas,
            "fused": fused,
        }
        return prob, trace

    def __call__(self, x, y) -> ProbabilityMap:
        return self.forward(x, y)


def build_model(cfg, dtype=None) -> ChangeDetector:
    """Construct a model from a ModelConfig-like object."""
    return ChangeDetector(
        seed=cfg.seed,
        width_factor=cfg.width_factor,
        stage_depths=tuple(cfg.stage_depths),
        stage_strides=tuple(cfg.stage_strides),
        use_relation=cfg.use_relation,
        use_scale=cfg.use_scale,
        use_fusion=cfg.use_fusion,
        attention_scaling=cfg.attention_scaling,
        dtype=dtype if dtype is not None else np.dtype(cfg.dtype),
    )
