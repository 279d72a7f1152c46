"""Pyramid extractor shapes, Siamese purity, and normalization blocks."""

import numpy as np
import pytest

from changedet.autodiff import Tensor, tsum, sigmoid
from changedet.backbone import Backbone, ConfigError, FeaturePyramid, scaled_widths
from changedet.gradcheck import max_rel_error
from changedet.layers import GroupNorm, num_norm_groups

import oracles


def make_backbone(seed=0, width_factor=0.125, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return Backbone(rng, width_factor=width_factor, dtype=dtype)


class TestShapes:
    def test_width_scaling(self):
        assert scaled_widths(0.125) == (8, 16, 32, 64)
        assert scaled_widths(1 / 16) == (4, 8, 16, 32)
        assert scaled_widths(1.0) == (64, 128, 256, 512)

    def test_64px_eighth_width_pyramid(self):
        bb = make_backbone()
        rng = np.random.default_rng(1)
        pyr = bb.extract(Tensor(rng.random((3, 64, 64), dtype=np.float32)))
        assert pyr.channels == (8, 16, 32, 64)
        assert pyr.sizes == ((16, 16), (8, 8), (8, 8), (8, 8))

    def test_indivisible_size_rejected_before_compute(self):
        bb = make_backbone()
        with pytest.raises(ConfigError, match="not divisible"):
            bb.extract(Tensor(np.zeros((3, 60, 64), dtype=np.float32)))

    def test_non_rgb_rejected(self):
        bb = make_backbone()
        with pytest.raises(ConfigError):
            bb.extract(Tensor(np.zeros((1, 64, 64), dtype=np.float32)))

    def test_pyramid_needs_four_levels(self):
        with pytest.raises(ConfigError):
            FeaturePyramid([Tensor(np.zeros((1, 2, 2)))] * 3)


class TestSiamese:
    def test_identical_inputs_identical_outputs(self):
        bb = make_backbone(seed=3)
        rng = np.random.default_rng(5)
        img = rng.random((3, 32, 32), dtype=np.float32)
        a = bb.extract(Tensor(img.copy()))
        b = bb.extract(Tensor(img.copy()))
        for la, lb in zip(a.levels, b.levels):
            np.testing.assert_array_equal(la.data, lb.data)

    def test_zero_image_constant_levels_at_init(self):
        bb = make_backbone(seed=7)
        pyr = bb.extract(Tensor(np.zeros((3, 32, 32), dtype=np.float32)))
        for level in pyr.levels:
            np.testing.assert_array_equal(level.data, np.zeros_like(level.data))

    def test_residual_block_identity_with_zeroed_branch(self):
        bb = make_backbone(seed=11)
        block = bb.stages[0][1]  # stride 1, equal channels
        assert block.project is None
        block.conv2.conv.kernel.data[:] = 0.0
        block.conv2.conv.bias.data[:] = 0.0
        rng = np.random.default_rng(13)
        probe = Tensor(np.abs(rng.standard_normal((8, 8, 8))).astype(np.float32))
        out = block(probe)
        np.testing.assert_allclose(out.data, probe.data, atol=1e-6)


class TestGroupNorm:
    def test_group_count_rule(self):
        assert num_norm_groups(1) == 1
        assert num_norm_groups(4) == 1
        assert num_norm_groups(8) == 1
        assert num_norm_groups(12) == 2
        assert num_norm_groups(16) == 2
        assert num_norm_groups(64) == 8

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(17)
        gn = GroupNorm(4, dtype=np.float64)
        gn.gamma.data = rng.standard_normal((4, 1, 1))
        gn.beta.data = rng.standard_normal((4, 1, 1))
        x = rng.standard_normal((4, 3, 3))
        out = gn(Tensor(x))
        ref = oracles.loop_group_norm(x, gn.groups, gn.gamma.data, gn.beta.data)
        np.testing.assert_allclose(out.data, ref, rtol=1e-10, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(19)
        gn = GroupNorm(4, dtype=np.float64)
        x = Tensor(rng.standard_normal((4, 2, 2)), requires_grad=True)
        fn = lambda v: tsum(sigmoid(gn(v)))
        assert max_rel_error(fn, [x]) < 1e-4


def test_backbone_gradients_flow_to_stem():
    bb = make_backbone(seed=23, width_factor=1 / 16, dtype=np.float64)
    rng = np.random.default_rng(29)
    img = Tensor(rng.random((3, 16, 16)))
    pyr = bb.extract(img)
    loss = tsum(pyr.levels[-1] * pyr.levels[-1])
    loss.backward()
    assert bb.stem.conv.kernel.grad is not None
    assert np.any(bb.stem.conv.kernel.grad != 0)
