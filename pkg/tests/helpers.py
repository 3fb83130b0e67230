"""Independent oracles shared by the test suite.

Everything here is deliberately implemented without touching the tape or
the fused kernels: central finite differences, a scalar step-by-step LIF
simulator, and brute-force selection oracles for the pruning rules.
"""

import numpy as np


def fd_grad(f, arr, indices=None, h=1e-3):
    """Central finite differences of scalar f at selected flat indices.

    Perturbs arr in place (restoring it), so f must re-read arr on every
    call.
    """
    flat = arr.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    grads = np.zeros(len(list(indices)) if not isinstance(indices, (list, np.ndarray)) else len(indices))
    indices = list(indices)
    out = np.zeros(len(indices), dtype=np.float64)
    for pos, i in enumerate(indices):
        keep = flat[i]
        flat[i] = keep + h
        up = f()
        flat[i] = keep - h
        down = f()
        flat[i] = keep
        out[pos] = (up - down) / (2.0 * h)
    return out


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def scalar_lif(currents, tau, u_th, u_rest=0.0, soft=True):
    """Step-by-step scalar reference simulator for one neuron.

    currents: iterable of input currents, one per time step.
    Returns (spikes, membranes_after_reset) as lists of floats.
    """
    u = u_rest
    spikes, membranes = [], []
    for i_t in currents:
        u = u + (-(u - u_rest) + i_t) / tau
        o = 1.0 if (u - u_th) >= 0.0 else 0.0
        if soft:
            u = u - o * u_th
        else:
            u = u * (1.0 - o)
        spikes.append(o)
        membranes.append(u)
    return spikes, membranes


def scalar_lif_train(current_grid, tau, u_th, u_rest=0.0, soft=True):
    """Vector the scalar simulator over all trailing elements.

    current_grid: [T, ...]; returns the spike train with the same shape,
    simulating each trailing element independently with the scalar rule.
    """
    grid = np.asarray(current_grid, dtype=np.float64)
    T = grid.shape[0]
    flat = grid.reshape(T, -1)
    out = np.zeros_like(flat)
    for m in range(flat.shape[1]):
        spikes, _ = scalar_lif(flat[:, m], tau, u_th, u_rest, soft)
        out[:, m] = spikes
    return out.reshape(grid.shape)


def brute_force_l1p_keep(w, k_zero):
    """Index set kept by magnitude pruning: everything except the k_zero
    smallest |w|, ties broken by row-major index."""
    flat = np.abs(np.asarray(w)).reshape(-1)
    ranked = sorted(range(flat.size), key=lambda i: (flat[i], i))
    return set(ranked[k_zero:])


def brute_force_top_cols(scores, k):
    """Top-k column indices by score, lower index winning ties."""
    ranked = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return sorted(ranked[:k])
