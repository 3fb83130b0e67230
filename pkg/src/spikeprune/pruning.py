"""Synapse pruning: unstructured magnitude masking and structured
dimension removal.

The unstructured path zeroes exactly ceil(p * m * n) entries of each
target matrix, picking the smallest by absolute value with row-major
order breaking ties; the masks persist on the model so fine-tuning
cannot resurrect pruned weights.

The structured path scores output dimensions by their column L1 sums,
averages the three projection scores for the attention stage, keeps the
top dimensions (equal counts per head), and physically slices the six
block matrices into low-rank projectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OverPruneError, ParameterError, PlanError
from .tensor import Tensor


def _as_array(w):
    return w.data if isinstance(w, Tensor) else np.asarray(w)


def l1p_mask(w, p):
    """Binary keep-mask zeroing the ceil(p * m * n) smallest |w|.

    Ties at the threshold magnitude are broken by row-major index, so the
    zero count is exact for any weight matrix.
    """
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"sparsity must lie in [0, 1], got {p}")
    arr = _as_array(w)
    k = math.ceil(p * arr.size)
    mask = np.ones(arr.size, dtype=arr.dtype)
    if k > 0:
        order = np.argsort(np.abs(arr.reshape(-1)), kind="stable")
        mask[order[:k]] = 0.0
    return mask.reshape(arr.shape)


def dva_scores(w):
    """Per-output-dimension significance: column sums of |w|."""
    arr = _as_array(w)
    return np.abs(arr).sum(axis=0)


def _top_k_stable(scores, k):
    """Indices of the k largest scores, lower index winning ties, sorted."""
    order = np.argsort(-scores, kind="stable")[:k]
    return np.sort(order)


def retained_extents(d_q, d_m, p, heads):
    """(d_down, d_m_down) after pruning at sparsity p.

    d_down is rounded up to a multiple of the head count so the sliced
    attention stays well-formed.
    """
    raw = d_q - math.ceil(p * d_q)
    d_down = math.ceil(raw / heads) * heads if raw > 0 else 0
    if d_down < heads:
        raise OverPruneError(f"p = {p} leaves {raw} of {d_q} attention dims for {heads} heads")
    d_m_down = d_m - math.ceil(p * d_m)
    if d_m_down < 1:
        raise OverPruneError(f"p = {p} leaves no hidden dims of {d_m}")
    return d_down, d_m_down


@dataclass
class BlockPlan:
    """Retained index sets for one block."""

    ssa_dims: np.ndarray
    mlp_dims: np.ndarray
    ssa_scores: np.ndarray = field(default=None, repr=False)
    mlp_scores: np.ndarray = field(default=None, repr=False)


@dataclass
class PrunePlan:
    """Either a mask set (unstructured) or retained-dimension sets
    (structured) for every block, plus the scores that produced them."""

    kind: str
    p: float
    masks: dict = None
    block_plans: list = None

    def to_meta(self):
        meta = {"kind": self.kind, "p": self.p}
        if self.block_plans is not None:
            meta["blocks"] = [
                {"ssa_dims": bp.ssa_dims.tolist(), "mlp_dims": bp.mlp_dims.tolist()}
                for bp in self.block_plans
            ]
        return meta

    @classmethod
    def from_meta(cls, meta, masks=None):
        block_plans = None
        if "blocks" in meta:
            block_plans = [
                BlockPlan(
                    ssa_dims=np.asarray(bp["ssa_dims"], dtype=np.int64),
                    mlp_dims=np.asarray(bp["mlp_dims"], dtype=np.int64),
                )
                for bp in meta["blocks"]
            ]
        return cls(kind=meta["kind"], p=float(meta["p"]), masks=masks, block_plans=block_plans)


def dsp_plan(blk, p):
    """Retained dimensions for one block at sparsity p.

    Attention dims are ranked by the mean column-L1 score of the three
    projections, selected top-k within each head slice; hidden dims are
    ranked by the first MLP matrix alone (it is the sole projector into
    the hidden space).
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"structured sparsity must lie in [0, 1), got {p}")
    d_q, heads = blk.d_q, blk.heads
    d_m = blk.d_m_eff
    s_ssa = (dva_scores(blk.u_q) + dva_scores(blk.u_k) + dva_scores(blk.u_v)) / 3.0
    d_down, d_m_down = retained_extents(d_q, d_m, p, heads)
    dh = d_q // heads
    keep_per_head = d_down // heads
    ssa_dims = []
    for head in range(heads):
        lo = head * dh
        local = _top_k_stable(s_ssa[lo : lo + dh], keep_per_head)
        ssa_dims.append(local + lo)
    ssa_dims = np.concatenate(ssa_dims)
    mlp_scores = dva_scores(blk.m1)
    mlp_dims = _top_k_stable(mlp_scores, d_m_down)
    return BlockPlan(ssa_dims=ssa_dims, mlp_dims=mlp_dims,
                     ssa_scores=s_ssa, mlp_scores=mlp_scores)


def make_plan(model, kind, p):
    """Build a whole-model plan of the given kind."""
    if kind == "l1p":
        masks = {}
        for i, blk in enumerate(model.blocks):
            for name, w in blk.weight_items():
                masks[f"block{i}.{name}"] = l1p_mask(w, p)
        return PrunePlan(kind="l1p", p=p, masks=masks)
    if kind == "dsp":
        return PrunePlan(kind="dsp", p=p, block_plans=[dsp_plan(blk, p) for blk in model.blocks])
    raise ParameterError(f"unknown prune kind {kind!r}")


def random_plan(model, p, kind, seed):
    """Same geometry as the principled plan, uniform-random selection."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(23,)))
    if kind == "l1p":
        if not 0.0 <= p <= 1.0:
            raise ParameterError(f"sparsity must lie in [0, 1], got {p}")
        masks = {}
        for i, blk in enumerate(model.blocks):
            for name, w in blk.weight_items():
                size = w.size
                k = math.ceil(p * size)
                mask = np.ones(size, dtype=w.data.dtype)
                if k > 0:
                    mask[rng.permutation(size)[:k]] = 0.0
                masks[f"block{i}.{name}"] = mask.reshape(w.shape)
        return PrunePlan(kind="l1p", p=p, masks=masks)
    if kind == "dsp":
        if not 0.0 <= p < 1.0:
            raise ParameterError(f"structured sparsity must lie in [0, 1), got {p}")
        block_plans = []
        for blk in model.blocks:
            d_down, d_m_down = retained_extents(blk.d_q, blk.d_m_eff, p, blk.heads)
            dh = blk.d_q // blk.heads
            keep_per_head = d_down // blk.heads
            dims = []
            for head in range(blk.heads):
                lo = head * dh
                dims.append(np.sort(rng.permutation(dh)[:keep_per_head]) + lo)
            mlp_dims = np.sort(rng.permutation(blk.d_m_eff)[:d_m_down])
            block_plans.append(BlockPlan(ssa_dims=np.concatenate(dims), mlp_dims=mlp_dims))
        return PrunePlan(kind="dsp", p=p, block_plans=block_plans)
    raise ParameterError(f"unknown prune kind {kind!r}")


def _check_geometry(model, plan):
    if plan.kind == "l1p":
        expected = {
            f"block{i}.{name}": w.shape
            for i, blk in enumerate(model.blocks)
            for name, w in blk.weight_items()
        }
        if set(plan.masks) != set(expected):
            raise PlanError(
                f"plan masks cover {sorted(plan.masks)}, model needs {sorted(expected)}"
            )
        for key, shape in expected.items():
            if plan.masks[key].shape != shape:
                raise PlanError(
                    f"mask for {key} has shape {plan.masks[key].shape}, weight is {shape}"
                )
    else:
        if len(plan.block_plans) != len(model.blocks):
            raise PlanError(
                f"plan covers {len(plan.block_plans)} blocks, model has {len(model.blocks)}"
            )
        for bp, blk in zip(plan.block_plans, model.blocks):
            for dims, extent in ((bp.ssa_dims, blk.d_q), (bp.mlp_dims, blk.d_m_eff)):
                if len(dims) == 0 or len(np.unique(dims)) != len(dims):
                    raise PlanError("retained dims must be nonempty and unique")
                if dims.min() < 0 or dims.max() >= extent:
                    raise PlanError(f"retained dims out of range for extent {extent}")
            if len(bp.ssa_dims) % blk.heads != 0:
                raise PlanError("retained attention dims are not divisible by head count")


def apply_plan(model, plan):
    """Return a pruned copy of the model.

    Unstructured: weights multiplied by their masks, masks attached for
    re-application after every optimizer step. Structured: the six
    matrices are physically sliced to the retained dimensions; the
    attention scale of the original geometry is kept.
    """
    _check_geometry(model, plan)
    pruned = model.clone()
    if plan.kind == "l1p":
        for i, blk in enumerate(pruned.blocks):
            for name, w in blk.weight_items():
                mask = plan.masks[f"block{i}.{name}"].astype(w.data.dtype)
                w.data *= mask
                blk.masks[name] = mask.copy()
    else:
        for bp, blk in zip(plan.block_plans, pruned.blocks):
            ssa, mlp = bp.ssa_dims, bp.mlp_dims

            def sliced(w, rows=None, cols=None):
                data = w.data
                if rows is not None:
                    data = data[rows, :]
                if cols is not None:
                    data = data[:, cols]
                return Tensor(np.ascontiguousarray(data), requires_grad=True, dtype=data.dtype)

            blk.u_q = sliced(blk.u_q, cols=ssa)
            blk.u_k = sliced(blk.u_k, cols=ssa)
            blk.u_v = sliced(blk.u_v, cols=ssa)
            blk.m0 = sliced(blk.m0, rows=ssa)
            blk.m1 = sliced(blk.m1, cols=mlp)
            blk.m2 = sliced(blk.m2, rows=mlp)
    pruned.plan = plan
    return pruned
