"""LIF / sLIF neuron layers.

The dynamics are the Euler-discretized leaky integrator: the membrane
decays toward the resting potential, integrates the input current scaled
by 1/tau, fires through a thresholded step with a rectangular surrogate
gradient, and resets softly (subtract threshold) or hard (zero).

The synergistic variant (sLIF) is the same layer with the membrane time
constant and firing threshold marked learnable so the optimizer updates
them alongside the synaptic weights.

``layer_forward`` has two equivalent execution paths: a composed path
built from tape primitives, and a fused path that runs the whole unroll
in one kernel call (compiled extension when built, numpy otherwise) and
records a single tape node. Both produce identical spike trains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionError, EmptyInputError, ParameterError
from .tensor import (
    Tensor,
    accumulate_grad,
    clamped_linear,
    heaviside_surrogate,
    index_first,
    op_output,
    stack,
)

# Tightest f32-representable values inside the valid ranges (f32(1.01)
# itself rounds below 1.01, so the next grid point up is the real floor).
TAU_MIN = float(np.nextafter(np.float32(1.01), np.float32(np.inf)))
TAU_MAX = 100.0
U_TH_MIN = float(np.float32(0.1))
U_TH_MAX = 5.0

# Flipped by the benchmark/tests; None means "fused".
DEFAULT_FUSED = True


@dataclass
class SLIFParams:
    """Per-layer intrinsic parameters.

    tau and u_th are scalar tensors so the tape can reach them; their
    requires_grad flags mirror learn_tau / learn_u_th.
    """

    tau: Tensor
    u_th: Tensor
    u_rest: float = 0.0
    reset_mode: str = "soft"
    surrogate_width: float = 1.0
    learn_tau: bool = False
    learn_u_th: bool = False

    @classmethod
    def create(cls, tau=2.0, u_th=1.0, u_rest=0.0, reset_mode="soft",
               surrogate_width=1.0, learnable=False, dtype=np.float32):
        if not (TAU_MIN <= tau <= TAU_MAX):
            raise ParameterError(f"tau must lie in [{TAU_MIN}, {TAU_MAX}], got {tau}")
        if not (U_TH_MIN <= u_th <= U_TH_MAX):
            raise ParameterError(f"u_th must lie in [{U_TH_MIN}, {U_TH_MAX}], got {u_th}")
        if reset_mode not in ("soft", "hard"):
            raise ParameterError(f"reset_mode must be 'soft' or 'hard', got {reset_mode!r}")
        if surrogate_width <= 0:
            raise ParameterError(f"surrogate width must be positive, got {surrogate_width}")
        return cls(
            tau=Tensor(np.asarray(tau, dtype=dtype), requires_grad=learnable, dtype=dtype),
            u_th=Tensor(np.asarray(u_th, dtype=dtype), requires_grad=learnable, dtype=dtype),
            u_rest=float(u_rest),
            reset_mode=reset_mode,
            surrogate_width=float(surrogate_width),
            learn_tau=learnable,
            learn_u_th=learnable,
        )

    def copy(self, learnable=None):
        """Deep copy; optionally flip both learnability flags."""
        learn_tau = self.learn_tau if learnable is None else learnable
        learn_u_th = self.learn_u_th if learnable is None else learnable
        return SLIFParams(
            tau=Tensor(self.tau.data.copy(), requires_grad=learn_tau, dtype=self.tau.data.dtype),
            u_th=Tensor(self.u_th.data.copy(), requires_grad=learn_u_th, dtype=self.u_th.data.dtype),
            u_rest=self.u_rest,
            reset_mode=self.reset_mode,
            surrogate_width=self.surrogate_width,
            learn_tau=learn_tau,
            learn_u_th=learn_u_th,
        )

    def clamp_(self):
        """Clip tau and u_th into their valid ranges in place."""
        np.clip(self.tau.data, TAU_MIN, TAU_MAX, out=self.tau.data)
        np.clip(self.u_th.data, U_TH_MIN, U_TH_MAX, out=self.u_th.data)

    def learnable_tensors(self):
        out = []
        if self.learn_tau:
            out.append(self.tau)
        if self.learn_u_th:
            out.append(self.u_th)
        return out


def make_lif(p: SLIFParams) -> SLIFParams:
    """Same dynamics with the intrinsic parameters frozen."""
    return p.copy(learnable=False)


def make_slif(p: SLIFParams) -> SLIFParams:
    """Same dynamics with tau and u_th learnable."""
    return p.copy(learnable=True)


@dataclass
class NeuronState:
    """Membrane potential and spikes of one simulation step."""

    u: Tensor
    o: Tensor


def step(state: NeuronState, i_t, p: SLIFParams, relaxed=False) -> NeuronState:
    """Advance one step: integrate, fire, reset."""
    u_t = membrane_update(state.u, i_t, p)
    o_t, u_after = fire_and_reset(u_t, p, relaxed=relaxed)
    return NeuronState(u=u_after, o=o_t)


def membrane_update(u_prev, i_t, p: SLIFParams):
    """One Euler step: u + (-(u - u_rest) + I) / tau, differentiable in
    u_prev, I and tau."""
    if u_prev.shape != i_t.shape:
        raise DimensionError(f"membrane shapes differ: {u_prev.shape} vs {i_t.shape}")
    return u_prev + (-(u_prev - p.u_rest) + i_t) / p.tau


def fire_and_reset(u_t, p: SLIFParams, relaxed=False):
    """Threshold the membrane and reset it.

    Returns (spikes, membrane-after-reset). The u_th path carries the
    negated surrogate, and the soft reset subtracts exactly o * u_th so
    sub-threshold residue is preserved.
    """
    v = u_t - p.u_th
    spike_fn = clamped_linear if relaxed else heaviside_surrogate
    o = spike_fn(v, p.surrogate_width)
    if p.reset_mode == "soft":
        u_after = u_t - o * p.u_th
    else:
        u_after = u_t * (1.0 - o)
    return o, u_after


def layer_forward(i, p: SLIFParams, relaxed=False, fused=None):
    """Run the full membrane/fire/reset unroll over the leading time axis.

    i: [T, ...] input currents; membrane starts at u_rest each call.
    Returns the spike train with the same shape as i.
    """
    if i.ndim < 1 or i.shape[0] == 0:
        raise EmptyInputError("layer_forward needs at least one time step")
    if fused is None:
        fused = DEFAULT_FUSED
    if fused:
        return _layer_forward_fused(i, p, relaxed)
    return _layer_forward_composed(i, p, relaxed)


def _layer_forward_composed(i, p, relaxed):
    T = i.shape[0]
    state = NeuronState(
        u=Tensor(np.full(i.shape[1:], p.u_rest, dtype=i.data.dtype), dtype=i.data.dtype),
        o=None,
    )
    outs = []
    for t in range(T):
        state = step(state, index_first(i, t), p, relaxed=relaxed)
        outs.append(state.o)
    return stack(outs, axis=0)


def _layer_forward_fused(i, p, relaxed):
    T = i.shape[0]
    flat = np.ascontiguousarray(i.data.reshape(T, -1))
    tau = float(p.tau.data)
    u_th = float(p.u_th.data)
    soft = p.reset_mode == "soft"
    spikes, u_pre = _kernels.lif_forward(
        flat, tau, u_th, p.u_rest, soft, p.surrogate_width, relaxed
    )
    out_data = spikes.reshape(i.data.shape)
    in_shape = i.data.shape

    def backward_fn(g):
        gflat = np.ascontiguousarray(g.reshape(T, -1))
        gi, g_tau, g_uth = _kernels.lif_backward(
            gflat, spikes, u_pre, tau, u_th, p.u_rest, soft, p.surrogate_width, relaxed
        )
        accumulate_grad(i, gi.reshape(in_shape))
        accumulate_grad(p.tau, np.asarray(g_tau, dtype=p.tau.data.dtype))
        accumulate_grad(p.u_th, np.asarray(g_uth, dtype=p.u_th.data.dtype))

    return op_output(out_data, "lif_unroll", (i, p.tau, p.u_th), backward_fn)


@dataclass
class SpikingLayer:
    """A named neuron layer bound to one set of intrinsic parameters."""

    name: str
    params: SLIFParams
    fused: bool | None = None

    def __call__(self, i, relaxed=False, trace=None):
        out = layer_forward(i, self.params, relaxed=relaxed, fused=self.fused)
        if trace is not None:
            trace.record_layer(self.name, i.data, out.data)
        return out

    def copy(self, learnable=None):
        return SpikingLayer(self.name, self.params.copy(learnable=learnable), self.fused)
