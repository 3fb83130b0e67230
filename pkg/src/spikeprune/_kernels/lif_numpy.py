"""Pure-numpy implementation of the fused LIF time-loop kernels.

This is the fallback backend: identical contract to the compiled
extension, one vectorized pass per time step instead of a C loop.
"""

from __future__ import annotations

import numpy as np


def lif_forward(current, tau, u_th, u_rest, soft, width, relaxed):
    """Unroll the membrane recurrence over the leading time axis.

    current: [T, M] float array of input currents.
    Returns (spikes [T, M], u_pre [T, M]) where u_pre is the membrane
    potential before reset at each step; both are needed by the backward.
    """
    T, M = current.shape
    dtype = current.dtype
    spikes = np.empty_like(current)
    u_pre = np.empty_like(current)
    u = np.full(M, u_rest, dtype=dtype)
    for t in range(T):
        u = u + (-(u - u_rest) + current[t]) / tau
        v = u - u_th
        if relaxed:
            o = np.clip(v / width + 0.5, 0.0, 1.0)
        else:
            o = (v >= 0).astype(dtype)
        u_pre[t] = u
        spikes[t] = o
        if soft:
            u = u - o * u_th
        else:
            u = u * (1.0 - o)
    return spikes, u_pre


def lif_backward(grad_out, spikes, u_pre, tau, u_th, u_rest, soft, width, relaxed):
    """Reverse pass through the recurrence recorded by :func:`lif_forward`.

    Returns (grad_current [T, M], grad_tau, grad_u_th); the scalar grads
    are summed over every element and time step.
    """
    T, M = grad_out.shape
    dtype = grad_out.dtype
    grad_current = np.empty_like(grad_out)
    g_tau = 0.0
    g_uth = 0.0
    half = width / 2.0
    gu_post = np.zeros(M, dtype=dtype)
    for t in range(T - 1, -1, -1):
        o = spikes[t]
        up = u_pre[t]
        surr = (np.abs(up - u_th) < half).astype(dtype) / width
        go = grad_out[t].copy()
        if soft:
            go += gu_post * (-u_th)
            gu_pre = gu_post.copy()
            g_uth += float((gu_post * (-o)).sum(dtype=np.float64))
        else:
            go += gu_post * (-up)
            gu_pre = gu_post * (1.0 - o)
        gv = go * surr
        gu_pre += gv
        g_uth -= float(gv.sum(dtype=np.float64))
        if t == 0:
            u_prev = np.full(M, u_rest, dtype=dtype)
        elif soft:
            u_prev = u_pre[t - 1] - spikes[t - 1] * u_th
        else:
            u_prev = u_pre[t - 1] * (1.0 - spikes[t - 1])
        grad_current[t] = gu_pre / tau
        g_tau += float((gu_pre * (-(up - u_prev) / tau)).sum(dtype=np.float64))
        gu_post = gu_pre * (1.0 - 1.0 / tau)
    return grad_current, g_tau, g_uth
