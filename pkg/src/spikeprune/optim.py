"""Adaptive-moment gradient descent with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .errors import MissingGradError, NonFiniteError
from .tensor import Tensor


class AdamW:
    """Per-parameter first/second moment updates, weight decay applied
    directly to the weights rather than through the gradient.

    ``params`` is either a flat list of tensors or a list of group dicts
    ``{"params": [...], "weight_decay": float}`` so intrinsic neuron
    parameters can opt out of decay. ``lr`` may be reassigned between
    steps (the trainers drive it with a cosine schedule).
    """

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if lr < 0:
            raise ValueError(f"learning rate must be nonnegative, got {lr}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be nonnegative, got {weight_decay}")
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self.groups = []
        if params and isinstance(params[0], Tensor):
            params = [{"params": list(params), "weight_decay": weight_decay}]
        for group in params:
            tensors = list(group["params"])
            self.groups.append(
                {
                    "params": tensors,
                    "weight_decay": float(group.get("weight_decay", weight_decay)),
                    "m": [np.zeros_like(t.data) for t in tensors],
                    "v": [np.zeros_like(t.data) for t in tensors],
                }
            )

    def parameters(self):
        for group in self.groups:
            yield from group["params"]

    def step(self):
        """Apply one update to every parameter and clear their gradients."""
        for group in self.groups:
            for t in group["params"]:
                if t.grad is None:
                    raise MissingGradError(
                        f"parameter with shape {t.shape} has no gradient; run backward first"
                    )
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.step_count
        bias2 = 1.0 - b2**self.step_count
        for group in self.groups:
            wd = group["weight_decay"]
            for t, m, v in zip(group["params"], group["m"], group["v"]):
                g = t.grad
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * (g * g)
                update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
                if wd:
                    t.data -= (self.lr * wd) * t.data
                t.data -= self.lr * update.astype(t.data.dtype, copy=False)
                if not np.all(np.isfinite(t.data)):
                    raise NonFiniteError("optimizer step produced non-finite parameter values")
                t.grad = None

    def zero_grad(self):
        for group in self.groups:
            for t in group["params"]:
                t.grad = None


def optimizer_step(params, opt):
    """Apply one update to ``params`` through ``opt``.

    The params must be exactly the tensors the optimizer was built over
    (moment buffers are positional); grads must be populated and are
    cleared by the update.
    """
    owned = list(opt.parameters())
    if [id(t) for t in params] != [id(t) for t in owned]:
        raise ValueError("params do not match the optimizer's parameter list")
    opt.step()


def cosine_lr(base_lr, epoch, total_epochs):
    """Cosine decay from base_lr at epoch 0 toward 0 at the final epoch."""
    if total_epochs <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * epoch / (total_epochs - 1)))
