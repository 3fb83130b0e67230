"""Pruning: magnitude masks, dimension scores, plan construction,
slice-vs-pad equivalence, mask persistence."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_force_l1p_keep, brute_force_top_cols

from spikeprune.errors import OverPruneError, ParameterError, PlanError
from spikeprune.model import build_model, count_params, model_forward
from spikeprune.pruning import (
    apply_plan,
    dsp_plan,
    dva_scores,
    l1p_mask,
    make_plan,
    random_plan,
    retained_extents,
)
from spikeprune.tensor import Tensor


class TestL1PMask:
    def test_hand_example(self):
        w = np.array([[0.5, -0.1], [0.2, -0.9]], dtype=np.float32)
        mask = l1p_mask(w, 0.5)
        np.testing.assert_array_equal(mask, [[1.0, 0.0], [0.0, 1.0]])

    def test_p_zero_keeps_all(self):
        mask = l1p_mask(np.ones((3, 3), dtype=np.float32), 0.0)
        np.testing.assert_array_equal(mask, 1.0)

    def test_p_one_zeros_all(self):
        mask = l1p_mask(np.ones((3, 3), dtype=np.float32), 1.0)
        np.testing.assert_array_equal(mask, 0.0)

    def test_against_brute_force(self, rng):
        w = rng.standard_normal((16, 16)).astype(np.float32)
        mask = l1p_mask(w, 0.7)
        k = math.ceil(0.7 * w.size)
        kept = {i for i, m in enumerate(mask.reshape(-1)) if m == 1.0}
        assert kept == brute_force_l1p_keep(w, k)

    def test_ties_broken_row_major(self):
        w = np.full((2, 3), 0.5, dtype=np.float32)
        mask = l1p_mask(w, 0.5)
        np.testing.assert_array_equal(mask.reshape(-1), [0, 0, 0, 1, 1, 1])

    @given(
        st.integers(1, 12), st.integers(1, 12),
        st.floats(0.0, 1.0),
        st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=60, deadline=None)
    def test_exact_zero_count(self, m, n, p, seed):
        w = np.random.default_rng(seed).standard_normal((m, n)).astype(np.float32)
        mask = l1p_mask(w, p)
        assert int((mask == 0).sum()) == math.ceil(p * m * n)

    def test_p_out_of_range(self):
        with pytest.raises(ParameterError):
            l1p_mask(np.ones((2, 2)), 1.5)


class TestDVAScores:
    def test_hand_example(self):
        s = dva_scores(np.array([[1.0, -2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(s, [4.0, 6.0])

    def test_zeros(self):
        np.testing.assert_array_equal(dva_scores(np.zeros((3, 4))), np.zeros(4))

    def test_column_permutation_equivariance(self, rng):
        w = rng.standard_normal((5, 6))
        perm = rng.permutation(6)
        np.testing.assert_allclose(dva_scores(w[:, perm]), dva_scores(w)[perm])


class TestDSPPlan:
    def test_p_zero_is_identity(self):
        m = build_model("Spikformer-1-8-16", d_in=4, num_classes=2, T=1, heads=2, seed=0)
        bp = dsp_plan(m.blocks[0], 0.0)
        np.testing.assert_array_equal(bp.ssa_dims, np.arange(8))
        np.testing.assert_array_equal(bp.mlp_dims, np.arange(16))

    def test_crafted_scores_single_head(self):
        m = build_model("Spikformer-1-4-8", d_in=4, num_classes=2, T=1, heads=1, seed=0)
        blk = m.blocks[0]
        # make s_ssa == [1, 9, 3, 7] exactly: one unit row, rest zero
        for w in (blk.u_q, blk.u_k, blk.u_v):
            w.data[...] = 0.0
            w.data[0] = np.array([1.0, 9.0, 3.0, 7.0], dtype=np.float32)
        bp = dsp_plan(blk, 0.5)
        np.testing.assert_array_equal(bp.ssa_dims, [1, 3])

    def test_against_brute_force_columns(self, rng):
        m = build_model("Spikformer-1-16-32", d_in=4, num_classes=2, T=1, heads=1, seed=1)
        blk = m.blocks[0]
        bp = dsp_plan(blk, 0.6)
        scores = (dva_scores(blk.u_q) + dva_scores(blk.u_k) + dva_scores(blk.u_v)) / 3.0
        d_down, dm_down = retained_extents(16, 32, 0.6, 1)
        assert list(bp.ssa_dims) == brute_force_top_cols(scores, d_down)
        assert list(bp.mlp_dims) == brute_force_top_cols(dva_scores(blk.m1), dm_down)

    def test_per_head_equal_counts(self, rng):
        m = build_model("Spikformer-1-16-32", d_in=4, num_classes=2, T=1, heads=4, seed=2)
        bp = dsp_plan(m.blocks[0], 0.5)
        dims = np.asarray(bp.ssa_dims)
        assert len(dims) % 4 == 0
        per_head = len(dims) // 4
        for h in range(4):
            in_slice = ((dims >= h * 4) & (dims < (h + 1) * 4)).sum()
            assert in_slice == per_head

    def test_rounds_up_to_head_multiple(self):
        # d=16, h=4, p=0.75 -> raw=4 ok; p=0.8 -> raw=16-13=3 -> rounds to 4
        assert retained_extents(16, 32, 0.8, 4)[0] == 4
        assert retained_extents(16, 32, 0.75, 4)[0] == 4

    def test_over_prune_error(self):
        with pytest.raises(OverPruneError):
            retained_extents(4, 8, 0.99, 4)
        m = build_model("Spikformer-1-4-8", d_in=4, num_classes=2, T=1, heads=4, seed=0)
        with pytest.raises(OverPruneError):
            dsp_plan(m.blocks[0], 0.95)


class TestApplyPlan:
    def test_l1p_zero_count(self, rng):
        m = build_model("Spikformer-2-8-16", d_in=4, num_classes=2, T=1, heads=2, seed=3)
        plan = make_plan(m, "l1p", 0.6)
        pruned = apply_plan(m, plan)
        expected = 0
        actual = 0
        for blk in pruned.blocks:
            for name, w in blk.weight_items():
                expected += math.ceil(0.6 * w.data.size)
                actual += int((blk.masks[name] == 0).sum())
                assert ((w.data == 0) | (blk.masks[name] == 1)).all()
        assert actual == expected

    def test_dsp_param_arithmetic(self):
        m = build_model("Spikformer-2-64-256", d_in=8, num_classes=4, T=1, heads=4, seed=4)
        pruned = apply_plan(m, make_plan(m, "dsp", 0.5))
        d_down, dm_down = retained_extents(64, 256, 0.5, 4)
        _, st = count_params(pruned)
        assert st == 2 * (4 * 64 * d_down + 2 * 64 * dm_down)

    @pytest.mark.parametrize("p", [0.3, 0.5, 0.8])
    def test_dsp_slice_equals_zero_padded(self, p, rng):
        """Sliced low-rank model == full model with pruned dims zeroed,
        elementwise exactly, at prune time."""
        m = build_model("Spikformer-2-16-32", d_in=8, num_classes=4, T=3, heads=4,
                        seed=int(p * 10), init_gain=3.0)
        plan = make_plan(m, "dsp", p)
        sliced = apply_plan(m, plan)

        padded = m.clone()
        for bp, blk in zip(plan.block_plans, padded.blocks):
            drop_ssa = np.setdiff1d(np.arange(blk.d_q), bp.ssa_dims)
            drop_mlp = np.setdiff1d(np.arange(blk.d_m_eff), bp.mlp_dims)
            for w in (blk.u_q, blk.u_k, blk.u_v):
                w.data[:, drop_ssa] = 0.0
            blk.m0.data[drop_ssa, :] = 0.0
            blk.m1.data[:, drop_mlp] = 0.0
            blk.m2.data[drop_mlp, :] = 0.0

        x = Tensor((rng.random((3, 5, 4, 8)) < 0.4).astype(np.float32))
        out_sliced = model_forward(x, sliced).data
        out_padded = model_forward(x, padded).data
        np.testing.assert_array_equal(out_sliced, out_padded)

    def test_attn_scale_survives_slicing(self):
        m = build_model("Spikformer-1-16-32", d_in=4, num_classes=2, T=1, heads=4, seed=0)
        scale = m.blocks[0].attn_scale
        pruned = apply_plan(m, make_plan(m, "dsp", 0.5))
        assert pruned.blocks[0].attn_scale == scale

    def test_geometry_mismatch(self):
        m1 = build_model("Spikformer-1-8-16", d_in=4, num_classes=2, T=1, heads=2, seed=0)
        m2 = build_model("Spikformer-2-8-16", d_in=4, num_classes=2, T=1, heads=2, seed=0)
        plan = make_plan(m2, "dsp", 0.5)
        with pytest.raises(PlanError):
            apply_plan(m1, plan)
        plan = make_plan(m2, "l1p", 0.5)
        with pytest.raises(PlanError):
            apply_plan(m1, plan)


class TestRandomPlan:
    def test_p_zero_identity(self):
        m = build_model("Spikformer-1-8-16", d_in=4, num_classes=2, T=1, heads=2, seed=0)
        plan = random_plan(m, 0.0, "dsp", seed=1)
        np.testing.assert_array_equal(plan.block_plans[0].ssa_dims, np.arange(8))
        plan = random_plan(m, 0.0, "l1p", seed=1)
        assert all((v == 1).all() for v in plan.masks.values())

    def test_same_seed_same_plan(self):
        m = build_model("Spikformer-1-8-16", d_in=4, num_classes=2, T=1, heads=2, seed=0)
        for kind in ("l1p", "dsp"):
            a = random_plan(m, 0.5, kind, seed=9)
            b = random_plan(m, 0.5, kind, seed=9)
            if kind == "l1p":
                assert all(np.array_equal(a.masks[k], b.masks[k]) for k in a.masks)
            else:
                for pa, pb in zip(a.block_plans, b.block_plans):
                    np.testing.assert_array_equal(pa.ssa_dims, pb.ssa_dims)
                    np.testing.assert_array_equal(pa.mlp_dims, pb.mlp_dims)

    def test_same_geometry_as_principled(self):
        m = build_model("Spikformer-1-16-32", d_in=4, num_classes=2, T=1, heads=4, seed=0)
        principled = make_plan(m, "dsp", 0.5)
        rand = random_plan(m, 0.5, "dsp", seed=3)
        assert len(rand.block_plans[0].ssa_dims) == len(principled.block_plans[0].ssa_dims)
        assert len(rand.block_plans[0].mlp_dims) == len(principled.block_plans[0].mlp_dims)
        rand_l1p = random_plan(m, 0.5, "l1p", seed=3)
        for key, mask in make_plan(m, "l1p", 0.5).masks.items():
            assert (rand_l1p.masks[key] == 0).sum() == (mask == 0).sum()
