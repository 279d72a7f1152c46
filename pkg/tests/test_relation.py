"""Relation-aware attention against loop oracles, symmetry, and gradients."""

import numpy as np
import pytest

from changedet.autodiff import ShapeError, Tensor, tsum, sigmoid
from changedet.gradcheck import max_rel_error
from changedet.relation import (
    AttentionProjections,
    FusionStage,
    RelationAware,
    attention,
    from_tokens,
    fuse_tokens,
    to_tokens,
)

import oracles


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


class TestAttention:
    def test_zero_values_give_zero(self):
        rng = np.random.default_rng(0)
        q = t64(rng.standard_normal((3, 2)))
        k = t64(rng.standard_normal((3, 2)))
        v = t64(np.zeros((3, 2)))
        np.testing.assert_array_equal(attention(q, k, v).data, np.zeros((3, 2)))

    def test_single_token_passthrough(self):
        rng = np.random.default_rng(1)
        q = t64(rng.standard_normal((1, 4)))
        k = t64(rng.standard_normal((1, 4)))
        v = t64(rng.standard_normal((1, 4)))
        np.testing.assert_allclose(attention(q, k, v).data, v.data, atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            t, c = rng.integers(1, 5), rng.integers(1, 5)
            q = rng.standard_normal((t, c))
            k = rng.standard_normal((t, c))
            v = rng.standard_normal((t, c))
            out = attention(t64(q), t64(k), t64(v))
            np.testing.assert_allclose(out.data, oracles.loop_attention(q, k, v),
                                       rtol=1e-10, atol=1e-12)

    def test_weights_row_stochastic(self):
        rng = np.random.default_rng(3)
        q = t64(rng.standard_normal((5, 3)))
        k = t64(rng.standard_normal((5, 3)))
        v = t64(rng.standard_normal((5, 3)))
        _, weights = attention(q, k, v, return_weights=True)
        np.testing.assert_allclose(weights.data.sum(axis=1), 1.0, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            attention(t64(np.zeros((2, 2))), t64(np.zeros((3, 2))), t64(np.zeros((3, 2))))


def make_projections(seed, channels, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return AttentionProjections(rng, channels, dtype=dtype)


class TestFuseTokens:
    def test_equal_inputs_shared_projections_collapse(self):
        rng = np.random.default_rng(4)
        f = t64(rng.standard_normal((3, 2)))
        proj = make_projections(5, 2)
        out = fuse_tokens(f, f, proj, proj)
        q = f.data @ proj.w_q.data
        k = f.data @ proj.w_k.data
        v = f.data @ proj.w_v.data
        self_term = oracles.loop_attention(q, k, v)
        np.testing.assert_allclose(out.data, f.data + 2 * self_term, rtol=1e-10)

    def test_zero_value_projections_passthrough(self):
        rng = np.random.default_rng(6)
        f_i = t64(rng.standard_normal((4, 3)))
        f_j = t64(rng.standard_normal((4, 3)))
        proj_i = make_projections(7, 3)
        proj_j = make_projections(8, 3)
        proj_i.w_v.data[:] = 0.0
        proj_j.w_v.data[:] = 0.0
        out = fuse_tokens(f_i, f_j, proj_i, proj_j)
        np.testing.assert_allclose(out.data, f_i.data, atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(9)
        f_i = rng.standard_normal((4, 2))
        f_j = rng.standard_normal((4, 2))
        proj_i = make_projections(10, 2)
        proj_j = make_projections(11, 2)
        out = fuse_tokens(t64(f_i), t64(f_j), proj_i, proj_j)
        ref = oracles.loop_fuse_tokens(
            f_i, f_j,
            (proj_i.w_q.data, proj_i.w_k.data, proj_i.w_v.data),
            (proj_j.w_q.data, proj_j.w_k.data, proj_j.w_v.data))
        np.testing.assert_allclose(out.data, ref, rtol=1e-10, atol=1e-12)

    def test_gradients_through_projections(self):
        rng = np.random.default_rng(12)
        f_i = t64(rng.standard_normal((2, 3)))
        f_j = t64(rng.standard_normal((2, 3)))
        proj_i = make_projections(13, 3)
        proj_j = make_projections(14, 3)
        params = [proj_i.w_q, proj_i.w_k, proj_i.w_v, proj_j.w_k, proj_j.w_v]
        fn = lambda *ps: tsum(sigmoid(fuse_tokens(f_i, f_j, proj_i, proj_j)))
        assert max_rel_error(fn, params) < 1e-4


def stage_oracle(stage: FusionStage, f_i: np.ndarray, f_j: np.ndarray) -> np.ndarray:
    """Loop-oracle evaluation of a full fusion stage on CHW arrays."""
    c, h, w = f_i.shape
    tok_i = f_i.reshape(c, h * w).T
    tok_j = f_j.reshape(c, h * w).T
    fused = oracles.loop_fuse_tokens(
        tok_i, tok_j,
        (stage.proj_i.w_q.data, stage.proj_i.w_k.data, stage.proj_i.w_v.data),
        (stage.proj_j.w_q.data, stage.proj_j.w_k.data, stage.proj_j.w_v.data))
    chw = fused.T.reshape(c, h, w)
    conv = oracles.loop_conv2d(chw, stage.out.conv.kernel.data,
                               stage.out.conv.bias.data, stride=1, padding=1)
    return oracles.loop_group_norm(conv, stage.out.norm.groups,
                                   stage.out.norm.gamma.data, stage.out.norm.beta.data)


class TestRelationAware:
    def make(self, seed=20, channels=2):
        rng = np.random.default_rng(seed)
        return RelationAware(rng, channels, dtype=np.float64)

    def test_equal_inputs_equal_outputs(self):
        mod = self.make()
        rng = np.random.default_rng(21)
        f = Tensor(rng.standard_normal((2, 2, 2)))
        out_x, out_y = mod(f, Tensor(f.data.copy()))
        np.testing.assert_array_equal(out_x.data, out_y.data)

    def test_swap_equivariance(self):
        mod = self.make(seed=22)
        rng = np.random.default_rng(23)
        a = Tensor(rng.standard_normal((2, 2, 2)))
        b = Tensor(rng.standard_normal((2, 2, 2)))
        x_ab, y_ab = mod(a, b)
        x_ba, y_ba = mod(b, a)
        np.testing.assert_array_equal(x_ab.data, y_ba.data)
        np.testing.assert_array_equal(y_ab.data, x_ba.data)

    def test_matches_composed_stage_oracle(self):
        mod = self.make(seed=24)
        rng = np.random.default_rng(25)
        fx = rng.standard_normal((2, 2, 2))
        fy = rng.standard_normal((2, 2, 2))
        out_x, out_y = mod(Tensor(fx), Tensor(fy))

        x1 = stage_oracle(mod.cross, fx, fy)
        y1 = stage_oracle(mod.cross, fy, fx)
        x2 = stage_oracle(mod.cross_self, x1, fx)
        y2 = stage_oracle(mod.cross_self, y1, fy)
        np.testing.assert_allclose(out_x.data, x2, rtol=1e-9, atol=1e-11)
        np.testing.assert_allclose(out_y.data, y2, rtol=1e-9, atol=1e-11)

    def test_token_round_trip(self):
        rng = np.random.default_rng(26)
        x = Tensor(rng.standard_normal((3, 2, 4)))
        back = from_tokens(to_tokens(x), (2, 4))
        np.testing.assert_array_equal(back.data, x.data)
