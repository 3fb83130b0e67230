"""Spiking-transformer architecture.

A model is a linear patch embedding with a spiking layer, a stack of
encoder blocks, and a linear classifier head fed by global average
pooling over time steps and patches. Each block runs spiking
self-attention (binary Q/K/V, scaled dot product, no softmax) followed
by a two-layer spiking MLP, with residual additions around both. The
residual sums are integer-valued spike counts; every subsequent spiking
layer re-binarizes, so matmul inputs inside the blocks stay spike-count
tensors and the energy model can account them as accumulates.

Canonical activation layout is [T, B, N, d] (time, batch, patches,
features); attention folds heads into the leading axis so every tensor
stays within rank 4.
"""

from __future__ import annotations

import re

import numpy as np

from .errors import ConfigError, DimensionError
from .neuron import SLIFParams, SpikingLayer
from .tensor import Tensor, matmul, mul, reshape, tensor_mean, transpose

BLOCK_WEIGHTS = ("u_q", "u_k", "u_v", "m0", "m1", "m2")
BLOCK_NEURONS = ("q", "k", "v", "attn", "m0", "m1", "m2")

_ARCH_RE = re.compile(r"^Spikformer-(\d+)-(\d+)-(\d+)$")


def parse_arch(text):
    """'Spikformer-L-d-d_m' -> (L, d, d_m)."""
    m = _ARCH_RE.match(text)
    if not m:
        raise ConfigError(f"architecture {text!r} is not of the form Spikformer-L-d-d_m")
    layers, d, d_m = (int(g) for g in m.groups())
    if layers < 1 or d < 1 or d_m < 1:
        raise ConfigError(f"architecture extents must be positive: {text!r}")
    return layers, d, d_m


def format_arch(layers, d, d_m):
    return f"Spikformer-{layers}-{d}-{d_m}"


class ForwardTrace:
    """Optional per-forward instrumentation.

    Collects spike rates per layer, matmul-site activity for the energy
    model, final-step attention score maps, and pre-neuron input
    currents for selected layers.
    """

    def __init__(self, attn=False, currents=(), matmuls=False):
        self.capture_attn = attn
        self.want_currents = set(currents)
        self.capture_matmuls = matmuls
        self.spike_sums = {}
        self.element_counts = {}
        self.currents = {}
        self.attn_maps = []
        self.matmul_sites = []

    def record_layer(self, name, current_data, spike_data):
        self.spike_sums[name] = self.spike_sums.get(name, 0.0) + float(spike_data.sum(dtype=np.float64))
        self.element_counts[name] = self.element_counts.get(name, 0) + spike_data.size
        if name in self.want_currents:
            prev = self.currents.get(name)
            flat = current_data.reshape(-1).copy()
            self.currents[name] = flat if prev is None else np.concatenate([prev, flat])

    def record_attn(self, maps):
        self.attn_maps.append(maps)

    def record_matmul(self, name, operand_data, macs_per_sample, spike_input):
        if not self.capture_matmuls:
            return
        self.matmul_sites.append(
            {
                "site": name,
                "activity": float(operand_data.mean(dtype=np.float64)),
                "macs": float(macs_per_sample),
                "spike_input": bool(spike_input),
            }
        )

    def rates(self):
        return {k: self.spike_sums[k] / self.element_counts[k] for k in self.spike_sums}


class STBlock:
    """One encoder block: six weight matrices plus their spiking layers."""

    def __init__(self, u_q, u_k, u_v, m0, m1, m2, heads, neurons, attn_scale, masks=None):
        if u_q.shape[1] % heads != 0:
            raise ConfigError(f"d_q = {u_q.shape[1]} is not divisible by {heads} heads")
        chain = (u_q.shape[1], m0.shape[0]), (m0.shape[1], m1.shape[0]), (m1.shape[1], m2.shape[0])
        for got, expect in chain:
            if got != expect:
                raise DimensionError(f"block weight extents do not chain: {got} vs {expect}")
        self.u_q, self.u_k, self.u_v = u_q, u_k, u_v
        self.m0, self.m1, self.m2 = m0, m1, m2
        self.heads = heads
        self.neurons = neurons
        self.attn_scale = float(attn_scale)
        self.masks = dict(masks) if masks else {}

    @property
    def d(self):
        return self.u_q.shape[0]

    @property
    def d_q(self):
        return self.u_q.shape[1]

    @property
    def d_m_eff(self):
        return self.m1.shape[1]

    def weight_items(self):
        for name in BLOCK_WEIGHTS:
            yield name, getattr(self, name)

    def clone(self):
        weights = {name: w.copy() for name, w in self.weight_items()}
        neurons = {site: self.neurons[site].copy() for site in BLOCK_NEURONS}
        masks = {k: v.copy() for k, v in self.masks.items()}
        return STBlock(heads=self.heads, neurons=neurons, attn_scale=self.attn_scale,
                       masks=masks, **weights)


class STModel:
    """Embedding + block stack + pooled linear head."""

    def __init__(self, embed, embed_neuron, blocks, head, T, heads, d_in,
                 num_classes, neuron_kind="lif", plan=None):
        self.embed = embed
        self.embed_neuron = embed_neuron
        self.blocks = list(blocks)
        self.head = head
        self.T = T
        self.heads = heads
        self.d_in = d_in
        self.num_classes = num_classes
        self.neuron_kind = neuron_kind
        self.plan = plan

    @property
    def d(self):
        return self.embed.shape[1]

    @property
    def depth(self):
        return len(self.blocks)

    def arch(self):
        """Effective architecture name; after structural pruning the middle
        extent is the retained Q/K/V width, mirroring the naming idiom."""
        blk = self.blocks[0]
        return format_arch(self.depth, blk.d_q, blk.d_m_eff)

    def weights(self):
        """(name, tensor) pairs in the canonical serialization order."""
        yield "embed.w", self.embed
        for i, blk in enumerate(self.blocks):
            for name, w in blk.weight_items():
                yield f"block{i}.{name}", w
        yield "head.w", self.head

    def spiking_layers(self):
        yield "embed", self.embed_neuron
        for i, blk in enumerate(self.blocks):
            for site in BLOCK_NEURONS:
                yield f"block{i}.{site}", blk.neurons[site]

    def parameters(self):
        """All trainable tensors: weights plus learnable intrinsics."""
        params = [w for _, w in self.weights()]
        for _, layer in self.spiking_layers():
            params.extend(layer.params.learnable_tensors())
        return params

    def weight_tensors(self):
        return [w for _, w in self.weights()]

    def intrinsic_tensors(self):
        out = []
        for _, layer in self.spiking_layers():
            out.extend(layer.params.learnable_tensors())
        return out

    def clamp_intrinsics(self):
        for _, layer in self.spiking_layers():
            layer.params.clamp_()

    def reapply_masks(self):
        """Force pruned weights back to exact zero (after optimizer steps)."""
        for blk in self.blocks:
            for name, mask in blk.masks.items():
                w = getattr(blk, name)
                w.data *= mask

    def clone(self):
        blocks = [blk.clone() for blk in self.blocks]
        m = STModel(
            embed=self.embed.copy(),
            embed_neuron=self.embed_neuron.copy(),
            blocks=blocks,
            head=self.head.copy(),
            T=self.T,
            heads=self.heads,
            d_in=self.d_in,
            num_classes=self.num_classes,
            neuron_kind=self.neuron_kind,
            plan=self.plan,
        )
        return m

    def snapshot(self):
        """Copy of all weights and intrinsic parameter values."""
        state = {name: w.data.copy() for name, w in self.weights()}
        for name, layer in self.spiking_layers():
            state[f"{name}.tau"] = layer.params.tau.data.copy()
            state[f"{name}.u_th"] = layer.params.u_th.data.copy()
        return state

    def restore(self, state):
        for name, w in self.weights():
            w.data[...] = state[name]
        for name, layer in self.spiking_layers():
            layer.params.tau.data[...] = state[f"{name}.tau"]
            layer.params.u_th.data[...] = state[f"{name}.u_th"]


def build_model(arch, d_in, num_classes, T, heads=4, neuron="lif", tau=2.0,
                u_th=1.0, u_rest=0.0, reset_mode="soft", surrogate_width=1.0,
                seed=0, init_gain=2.0, dtype=np.float32):
    """Construct a fresh model from an architecture string.

    Weights are N(0, gain/sqrt(fan_in)); the attention scale is fixed at
    1/sqrt(d_q) of the built geometry and survives structural pruning.
    """
    layers, d, d_m = parse_arch(arch)
    if d % heads != 0:
        raise ConfigError(f"d = {d} must be divisible by heads = {heads}")
    if neuron not in ("lif", "slif"):
        raise ConfigError(f"neuron must be 'lif' or 'slif', got {neuron!r}")
    learnable = neuron == "slif"
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))

    def init(m, n):
        w = rng.normal(0.0, init_gain / np.sqrt(m), size=(m, n))
        return Tensor(w.astype(dtype), requires_grad=True, dtype=dtype)

    def neuron_layer(name):
        params = SLIFParams.create(
            tau=tau, u_th=u_th, u_rest=u_rest, reset_mode=reset_mode,
            surrogate_width=surrogate_width, learnable=learnable, dtype=dtype,
        )
        return SpikingLayer(name, params)

    blocks = []
    for i in range(layers):
        neurons = {site: neuron_layer(f"block{i}.{site}") for site in BLOCK_NEURONS}
        blocks.append(
            STBlock(
                u_q=init(d, d), u_k=init(d, d), u_v=init(d, d),
                m0=init(d, d), m1=init(d, d_m), m2=init(d_m, d),
                heads=heads, neurons=neurons, attn_scale=1.0 / np.sqrt(d),
            )
        )
    return STModel(
        embed=init(d_in, d),
        embed_neuron=neuron_layer("embed"),
        blocks=blocks,
        head=init(d, num_classes),
        T=T,
        heads=heads,
        d_in=d_in,
        num_classes=num_classes,
        neuron_kind=neuron,
    )


def _fold_heads(x, heads):
    """[T, B, N, d_q] -> [T*B*heads, N, d_q/heads]."""
    T, B, N, d_q = x.shape
    dh = d_q // heads
    y = reshape(x, (T * B, N, heads, dh))
    y = transpose(y, (0, 2, 1, 3))
    return reshape(y, (T * B * heads, N, dh))


def _unfold_heads(x, T, B, heads):
    """[T*B*heads, N, dh] -> [T, B, N, heads*dh]."""
    _, N, dh = x.shape
    y = reshape(x, (T * B, heads, N, dh))
    y = transpose(y, (0, 2, 1, 3))
    return reshape(y, (T, B, N, heads * dh))


def ssa_forward(x, blk, relaxed=False, trace=None, block_idx=0):
    """Spiking self-attention: Q/K/V spikes, scaled dot product per head,
    spike, then the output projection with its spiking layer."""
    T, B, N, d = x.shape
    tag = f"block{block_idx}"
    d_q = blk.d_q
    dh = d_q // blk.heads
    if trace is not None:
        for wname in ("u_q", "u_k", "u_v"):
            trace.record_matmul(f"{tag}.{wname}", x.data, T * N * d * d_q, True)
    q = blk.neurons["q"](matmul(x, blk.u_q), relaxed, trace)
    k = blk.neurons["k"](matmul(x, blk.u_k), relaxed, trace)
    v = blk.neurons["v"](matmul(x, blk.u_v), relaxed, trace)
    q3 = _fold_heads(q, blk.heads)
    k3 = _fold_heads(k, blk.heads)
    v3 = _fold_heads(v, blk.heads)
    if trace is not None:
        trace.record_matmul(f"{tag}.qk", q.data, T * N * N * d_q, True)
    scores = mul(matmul(q3, transpose(k3, (0, 2, 1))), blk.attn_scale)
    if trace is not None and trace.capture_attn:
        trace.record_attn(scores.data.reshape(T, B, blk.heads, N, N)[-1].copy())
    if trace is not None:
        trace.record_matmul(f"{tag}.av", v.data, T * N * N * d_q, True)
    ctx = matmul(scores, v3)
    attn_in = _unfold_heads(ctx, T, B, blk.heads)
    x_attn = blk.neurons["attn"](attn_in, relaxed, trace)
    if trace is not None:
        trace.record_matmul(f"{tag}.m0", x_attn.data, T * N * d_q * d, True)
    return blk.neurons["m0"](matmul(x_attn, blk.m0), relaxed, trace)


def block_forward(x, blk, relaxed=False, trace=None, block_idx=0):
    """x' = SSA(x) + x; out = MLP(x') + x'."""
    tag = f"block{block_idx}"
    x_res = ssa_forward(x, blk, relaxed, trace, block_idx) + x
    if trace is not None:
        trace.record_matmul(f"{tag}.m1", x_res.data, x.shape[0] * x.shape[2] * blk.d * blk.d_m_eff, True)
    hidden = blk.neurons["m1"](matmul(x_res, blk.m1), relaxed, trace)
    if trace is not None:
        trace.record_matmul(f"{tag}.m2", hidden.data, x.shape[0] * x.shape[2] * blk.d_m_eff * blk.d, True)
    out = blk.neurons["m2"](matmul(hidden, blk.m2), relaxed, trace)
    return out + x_res


def model_forward(x, model, relaxed=False, trace=None):
    """Encoded input [T, B, N, d_in] -> logits [B, num_classes]."""
    if x.ndim != 4 or x.shape[0] != model.T or x.shape[3] != model.d_in:
        raise ConfigError(
            f"input shape {x.shape} does not match T={model.T}, d_in={model.d_in}"
        )
    T, B, N, _ = x.shape
    if trace is not None:
        trace.record_matmul("embed", x.data, T * N * model.d_in * model.d, False)
    h = model.embed_neuron(matmul(x, model.embed), relaxed, trace)
    for i, blk in enumerate(model.blocks):
        h = block_forward(h, blk, relaxed, trace, block_idx=i)
    pooled = tensor_mean(h, axis=(0, 2))
    if trace is not None:
        trace.record_matmul("head", pooled.data, model.d * model.num_classes, False)
    return matmul(pooled, model.head)


def count_params(model):
    """(total, st_block) parameter counts; masked weights count survivors."""
    st = 0
    for blk in model.blocks:
        for name, w in blk.weight_items():
            if name in blk.masks:
                st += int(blk.masks[name].sum())
            else:
                st += w.size
    total = st + model.embed.size + model.head.size
    return total, st
