"""Spiking-transformer architecture: shapes, hand traces, parameter
arithmetic, determinism, spike-count purity."""

import numpy as np
import pytest

from helpers import scalar_lif

from spikeprune.errors import ConfigError
from spikeprune.model import (
    ForwardTrace,
    block_forward,
    build_model,
    count_params,
    format_arch,
    model_forward,
    parse_arch,
    ssa_forward,
)
from spikeprune.tensor import Tensor


class TestArchString:
    def test_parse_roundtrip(self):
        assert parse_arch("Spikformer-8-512-2048") == (8, 512, 2048)
        assert format_arch(2, 64, 256) == "Spikformer-2-64-256"

    @pytest.mark.parametrize("bad", ["Spikformer-8-512", "Former-1-2-3", "Spikformer-0-4-4",
                                     "Spikformer-1-2-3-4", "spikformer-1-2-3"])
    def test_rejects_malformed(self, bad):
        with pytest.raises(ConfigError):
            parse_arch(bad)

    def test_heads_must_divide(self):
        with pytest.raises(ConfigError):
            build_model("Spikformer-1-30-60", d_in=8, num_classes=2, T=2, heads=4)


def spikes_like(rng, shape, rate=0.4):
    return Tensor((rng.random(shape) < rate).astype(np.float32))


class TestSSA:
    def test_zero_input_zero_output(self, rng):
        m = build_model("Spikformer-1-16-32", d_in=8, num_classes=2, T=2, heads=2, seed=0)
        x = Tensor(np.zeros((2, 3, 4, 16), dtype=np.float32))
        out = ssa_forward(x, m.blocks[0])
        np.testing.assert_array_equal(out.data, 0.0)

    def test_output_shape_matches_input(self, rng):
        m = build_model("Spikformer-1-16-64", d_in=8, num_classes=2, T=2, heads=2, seed=1)
        x = spikes_like(rng, (2, 3, 4, 16))
        assert ssa_forward(x, m.blocks[0]).shape == (2, 3, 4, 16)

    def test_single_head_single_patch_hand_trace(self, rng):
        """N=1, T=1, h=1: QK^T V collapses to (q.k) * v, all computable by
        hand with the scalar neuron rule."""
        m = build_model("Spikformer-1-4-8", d_in=4, num_classes=2, T=1, heads=1, seed=5)
        blk = m.blocks[0]
        x = Tensor(np.array([[[[1.0, 0.0, 1.0, 1.0]]]], dtype=np.float32))
        out = ssa_forward(x, blk)

        def spike_vec(current_vec, p):
            return np.array(
                [scalar_lif([c], float(p.tau.data), float(p.u_th.data),
                            p.u_rest, p.reset_mode == "soft")[0][0] for c in current_vec],
                dtype=np.float32,
            )

        xv = x.data[0, 0, 0]
        q = spike_vec(xv @ blk.u_q.data, blk.neurons["q"].params)
        k = spike_vec(xv @ blk.u_k.data, blk.neurons["k"].params)
        v = spike_vec(xv @ blk.u_v.data, blk.neurons["v"].params)
        attn_current = (q @ k) * blk.attn_scale * v
        x_attn = spike_vec(attn_current, blk.neurons["attn"].params)
        expect = spike_vec(x_attn @ blk.m0.data, blk.neurons["m0"].params)
        np.testing.assert_array_equal(out.data[0, 0, 0], expect)


class TestBlock:
    def test_zero_weights_pure_residual(self, rng):
        m = build_model("Spikformer-1-16-32", d_in=8, num_classes=2, T=2, heads=2, seed=0)
        blk = m.blocks[0]
        for _, w in blk.weight_items():
            w.data[...] = 0.0
        x = spikes_like(rng, (2, 3, 4, 16))
        out = block_forward(x, blk)
        np.testing.assert_array_equal(out.data, x.data)

    def test_shape_contract(self, rng):
        m = build_model("Spikformer-1-8-16", d_in=4, num_classes=2, T=3, heads=2, seed=2)
        x = spikes_like(rng, (3, 2, 5, 8))
        assert block_forward(x, m.blocks[0]).shape == (3, 2, 5, 8)

    def test_residual_changes_output(self, rng):
        """Removing the residual changes the output: the attention path is
        non-degenerate."""
        m = build_model("Spikformer-1-16-32", d_in=8, num_classes=2, T=2, heads=2, seed=3)
        blk = m.blocks[0]
        x = spikes_like(rng, (2, 2, 4, 16))
        with_res = block_forward(x, blk)
        ssa_only = ssa_forward(x, blk)
        assert not np.array_equal(with_res.data, ssa_only.data)

    def test_matmul_inputs_are_integer_spike_counts(self, rng):
        """Residual sums feed later matmuls as small nonnegative integers."""
        m = build_model("Spikformer-2-16-32", d_in=8, num_classes=2, T=2, heads=2, seed=4)
        x = spikes_like(rng, (2, 3, 4, 8))
        h = m.embed_neuron(Tensor(np.matmul(x.data, m.embed.data)))
        for blk in m.blocks:
            assert set(np.unique(h.data)).issubset({0.0, 1.0}) or np.array_equal(
                h.data, np.round(h.data)
            )
            assert h.data.min() >= 0.0
            h = block_forward(h, blk)
        assert np.array_equal(h.data, np.round(h.data))


class TestModelForward:
    def test_logits_shape(self, rng):
        m = build_model("Spikformer-2-16-32", d_in=8, num_classes=7, T=2, heads=2, seed=0)
        x = spikes_like(rng, (2, 5, 4, 8))
        assert model_forward(x, m).shape == (5, 7)

    def test_identical_inputs_identical_rows(self, rng):
        m = build_model("Spikformer-2-16-32", d_in=8, num_classes=3, T=2, heads=2, seed=0)
        one = (rng.random((2, 1, 4, 8)) < 0.5).astype(np.float32)
        x = Tensor(np.repeat(one, 4, axis=1))
        logits = model_forward(x, m).data
        for row in logits[1:]:
            np.testing.assert_array_equal(row, logits[0])

    def test_same_seed_bit_identical(self, rng):
        x = (rng.random((2, 3, 4, 8)) < 0.5).astype(np.float32)
        runs = []
        for _ in range(2):
            m = build_model("Spikformer-2-16-32", d_in=8, num_classes=3, T=2, heads=2, seed=42)
            runs.append(model_forward(Tensor(x), m).data.tobytes())
        assert runs[0] == runs[1]

    def test_input_shape_validation(self, rng):
        m = build_model("Spikformer-1-16-32", d_in=8, num_classes=3, T=2, heads=2, seed=0)
        with pytest.raises(ConfigError):
            model_forward(Tensor(np.zeros((3, 2, 4, 8), dtype=np.float32)), m)
        with pytest.raises(ConfigError):
            model_forward(Tensor(np.zeros((2, 2, 4, 9), dtype=np.float32)), m)


class TestCountParams:
    def test_reference_geometries(self):
        m = build_model("Spikformer-8-512-2048", d_in=48, num_classes=100, T=4, heads=8, seed=0)
        _, st = count_params(m)
        assert st == 25_165_824
        assert round(st / 1e6, 2) == 25.17

        m = build_model("Spikformer-4-384-1536", d_in=48, num_classes=10, T=4, heads=8, seed=0)
        _, st = count_params(m)
        assert st == 7_077_888
        assert round(st / 1e6, 2) == 7.08

    def test_hand_arithmetic(self):
        m = build_model("Spikformer-1-2-4", d_in=3, num_classes=2, T=1, heads=1, seed=0)
        total, st = count_params(m)
        assert st == 4 * 4 + 2 * 2 * 4
        assert total == st + 3 * 2 + 2 * 2

    def test_matches_brute_force_enumeration(self, rng):
        m = build_model("Spikformer-2-8-16", d_in=4, num_classes=3, T=1, heads=2, seed=1)
        total, st = count_params(m)
        brute_st = sum(w.data.size for blk in m.blocks for _, w in blk.weight_items())
        brute_total = brute_st + m.embed.data.size + m.head.data.size
        assert (total, st) == (brute_total, brute_st)


class TestTrace:
    def test_rates_and_sites(self, rng):
        m = build_model("Spikformer-1-16-32", d_in=8, num_classes=3, T=2, heads=2, seed=0)
        x = spikes_like(rng, (2, 3, 4, 8))
        trace = ForwardTrace(attn=True, currents=("block0.attn",), matmuls=True)
        model_forward(x, m, trace=trace)
        rates = trace.rates()
        assert set(rates) == {"embed"} | {f"block0.{s}" for s in
                                          ("q", "k", "v", "attn", "m0", "m1", "m2")}
        assert all(0.0 <= r <= 1.0 for r in rates.values())
        assert len(trace.attn_maps) == 1
        assert trace.attn_maps[0].shape == (3, 2, 4, 4)
        assert (trace.attn_maps[0] >= 0).all()
        assert "block0.attn" in trace.currents
        sites = {s["site"] for s in trace.matmul_sites}
        assert "embed" in sites and "head" in sites and "block0.qk" in sites
