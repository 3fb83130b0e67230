"""Post-hoc analyses over a frozen model.

Attention rollout multiplies residual-augmented, row-normalized
attention maps (final time step, heads fused by averaging) across the
block stack, reads patch saliency off the column means, and zeroes the
smallest entries at the discard ratio. Firing rates, input-current
histograms, a configurable accumulate/MAC energy model, and compression
ratio reporting round out the suite. Everything here is read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .model import ForwardTrace, count_params, model_forward
from .tensor import Tensor


@dataclass
class RolloutMask:
    """Per-patch saliency with exactly floor(discard_ratio * P) zeros."""

    values: np.ndarray
    discard_ratio: float
    layers: int
    heads: int


def attention_rollout(attn_maps, discard_ratio=0.85):
    """Roll a list of per-block [H, P, P] attention maps into a saliency
    vector over patches.

    Rows are normalized after adding the identity residual, so each
    factor is row-stochastic and the product keeps unit row sums; the
    mask is the column mean of the rollout matrix, thresholded by
    zeroing the smallest discard fraction (ties broken by index).
    """
    if not 0.0 <= discard_ratio < 1.0:
        raise ParameterError(f"discard_ratio must lie in [0, 1), got {discard_ratio}")
    if not attn_maps:
        raise ParameterError("attention_rollout needs at least one map")
    maps = [np.asarray(a, dtype=np.float64) for a in attn_maps]
    p = maps[0].shape[-1]
    heads = maps[0].shape[0]
    for a in maps:
        if a.ndim != 3 or a.shape[-1] != a.shape[-2]:
            raise DimensionError(f"attention map must be [H, P, P], got {a.shape}")
        if a.shape[-1] != p:
            raise DimensionError("attention maps disagree on patch count")
    rollout = np.eye(p)
    for a in maps:
        fused = a.mean(axis=0)
        fused = fused + np.eye(p)
        fused = fused / fused.sum(axis=1, keepdims=True)
        rollout = fused @ rollout
    mask = rollout.mean(axis=0)
    k = math.floor(discard_ratio * p)
    if k > 0:
        order = np.argsort(mask, kind="stable")
        mask = mask.copy()
        mask[order[:k]] = 0.0
    return RolloutMask(values=mask, discard_ratio=discard_ratio,
                       layers=len(maps), heads=heads)


def collect_attention(model, x, sample=0):
    """Final-time-step attention score maps for one sample: a list of
    [H, P, P] arrays, one per block, nonnegative by construction."""
    trace = ForwardTrace(attn=True)
    model_forward(_as_input(x), model, trace=trace)
    return [np.maximum(maps[sample], 0.0) for maps in trace.attn_maps]


def _as_input(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


@dataclass
class RateReport:
    per_layer: dict
    st_aggregate: float


def firing_rates(model, x):
    """Mean spike rate per spiking layer plus the aggregate rate over all
    block layers (total spikes / total elements)."""
    trace = ForwardTrace()
    model_forward(_as_input(x), model, trace=trace)
    per_layer = trace.rates()
    spikes = sum(v for k, v in trace.spike_sums.items() if k.startswith("block"))
    count = sum(v for k, v in trace.element_counts.items() if k.startswith("block"))
    return RateReport(per_layer=per_layer, st_aggregate=spikes / count)


@dataclass
class HistogramReport:
    density: np.ndarray
    edges: np.ndarray
    mean: float
    variance: float
    layer: str


def current_histogram(model, x, layer, bins=50):
    """Density-normalized histogram of pre-neuron input currents at one
    spiking layer (post-scaling, before the nonlinearity)."""
    known = {name for name, _ in model.spiking_layers()}
    if layer not in known:
        raise LookupError(f"unknown spiking layer {layer!r}; known: {sorted(known)}")
    trace = ForwardTrace(currents=(layer,))
    model_forward(_as_input(x), model, trace=trace)
    values = trace.currents[layer].astype(np.float64)
    density, edges = np.histogram(values, bins=bins, density=True)
    return HistogramReport(density=density, edges=edges,
                           mean=float(values.mean()), variance=float(values.var()),
                           layer=layer)


@dataclass
class EnergyModel:
    """Energy per multiply-accumulate and per accumulate, in picojoules.

    Defaults are the conventional 45 nm figures; both are configurable
    and never asserted as ground truth.
    """

    e_mac: float = 4.6
    e_ac: float = 0.9

    def __post_init__(self):
        if self.e_mac <= 0 or self.e_ac <= 0:
            raise ParameterError("energy constants must be strictly positive")


@dataclass
class EnergyReport:
    total_pj: float
    ac_pj: float
    mac_pj: float
    sites: list = field(default_factory=list)
    ratio_vs_reference: float = None

    def to_json(self):
        return {
            "total_pj": self.total_pj, "ac_pj": self.ac_pj, "mac_pj": self.mac_pj,
            "ratio_vs_reference": self.ratio_vs_reference, "sites": self.sites,
        }


def energy_from_sites(sites, em):
    """Fold matmul-site statistics into (total, ac, mac) picojoules.

    Spike-input sites count accumulates scaled by the site's mean input
    activity; analog sites count full multiply-accumulates.
    """
    ac = mac = 0.0
    for s in sites:
        if s["spike_input"]:
            ac += em.e_ac * s["activity"] * s["macs"]
        else:
            mac += em.e_mac * s["macs"]
    return ac + mac, ac, mac


def estimate_energy(model, x, em=None, reference=None):
    """Theoretical per-sample energy of one forward pass.

    ``reference`` may be another model (estimated on the same input
    geometry where possible) or a prior EnergyReport; the report then
    carries the energy ratio against it.
    """
    em = em or EnergyModel()
    trace = ForwardTrace(matmuls=True)
    model_forward(_as_input(x), model, trace=trace)
    total, ac, mac = energy_from_sites(trace.matmul_sites, em)
    ratio = None
    if reference is not None:
        if isinstance(reference, EnergyReport):
            ref_total = reference.total_pj
        else:
            ref_total = estimate_energy(reference, x, em).total_pj
        ratio = total / ref_total
    return EnergyReport(total_pj=total, ac_pj=ac, mac_pj=mac,
                        sites=trace.matmul_sites, ratio_vs_reference=ratio)


def compression_report(before, after):
    """Parameter counts and compression ratios, whole model and blocks."""
    total_b, st_b = count_params(before)
    total_a, st_a = count_params(after)
    return {
        "params_total_before": total_b,
        "params_total_after": total_a,
        "params_st_before": st_b,
        "params_st_after": st_a,
        "cr_total_pct": 100.0 * (1.0 - total_a / total_b),
        "cr_st_pct": 100.0 * (1.0 - st_a / st_b),
    }


# -- mask rendering -----------------------------------------------------


def mask_to_grid(mask, grid_hw=None):
    """Reshape a patch saliency vector onto its 2-D patch grid."""
    p = mask.shape[0]
    if grid_hw is None:
        side = math.isqrt(p)
        if side * side != p:
            raise DimensionError(f"{p} patches is not a square grid; pass grid_hw")
        grid_hw = (side, side)
    gh, gw = grid_hw
    if gh * gw != p:
        raise DimensionError(f"grid {gh}x{gw} does not hold {p} patches")
    return mask.reshape(gh, gw)


def bilinear_resize(img, out_hw):
    """Plain bilinear resampling of a 2-D array."""
    h, w = img.shape
    oh, ow = out_hw
    ys = (np.arange(oh) + 0.5) * h / oh - 0.5
    xs = (np.arange(ow) + 0.5) * w / ow - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def upsample_mask(mask, out_hw, grid_hw=None):
    """Nearest to the patch grid, then bilinear to the image size."""
    return bilinear_resize(mask_to_grid(np.asarray(mask, dtype=np.float64), grid_hw), out_hw)


def save_pgm(path, img):
    """Write a 2-D array as an ASCII portable graymap, max-normalized."""
    img = np.asarray(img, dtype=np.float64)
    top = img.max()
    scaled = np.zeros_like(img) if top <= 0 else img / top
    pixels = np.round(scaled * 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "w") as f:
        f.write(f"P2\n{w} {h}\n255\n")
        for row in pixels:
            f.write(" ".join(str(v) for v in row) + "\n")


def save_mask_csv(path, mask):
    with open(path, "w") as f:
        f.write("patch,saliency\n")
        for i, v in enumerate(np.asarray(mask).reshape(-1)):
            f.write(f"{i},{v!r}\n")
