"""Binary model checkpoints.

Layout: magic "STLW", u32 format version, u32 metadata length, JSON
metadata (sorted keys), u32 tensor count, then per-tensor records of
(u16 name length, name, u8 rank, u32 dims, raw little-endian f32 data).
Masks ride along as tensor records; prune-plan geometry, neuron
parameters, and the attention scales live in the metadata, so a loaded
structurally-pruned model reconstructs its sliced geometry exactly.

Save is a pure function of (model, extra metadata): a save/load/save
round trip is byte-identical. Files are written to a temp path and
renamed into place.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import CheckpointError, ParameterError
from .model import BLOCK_NEURONS, STBlock, STModel
from .neuron import SLIFParams, SpikingLayer
from .pruning import PrunePlan
from .tensor import Tensor

MAGIC = b"STLW"
VERSION = 1


def _neuron_meta(layer):
    p = layer.params
    return {
        "tau": float(p.tau.data),
        "u_th": float(p.u_th.data),
        "u_rest": p.u_rest,
        "reset_mode": p.reset_mode,
        "surrogate_width": p.surrogate_width,
        "learn_tau": p.learn_tau,
        "learn_u_th": p.learn_u_th,
    }


def _neuron_from_meta(name, meta):
    params = SLIFParams(
        tau=Tensor(np.asarray(meta["tau"], dtype=np.float32), requires_grad=meta["learn_tau"]),
        u_th=Tensor(np.asarray(meta["u_th"], dtype=np.float32), requires_grad=meta["learn_u_th"]),
        u_rest=float(meta["u_rest"]),
        reset_mode=meta["reset_mode"],
        surrogate_width=float(meta["surrogate_width"]),
        learn_tau=bool(meta["learn_tau"]),
        learn_u_th=bool(meta["learn_u_th"]),
    )
    return SpikingLayer(name, params)


def save_checkpoint(model, path, extra=None):
    """Write the model (weights, masks, neuron params, plan) to path.

    ``extra`` is a JSON-able dict (epoch, metrics, baseline counts...)
    stored verbatim under the "extra" metadata key.
    """
    for name, w in model.weights():
        if w.data.dtype != np.float32:
            raise ParameterError(f"checkpoints store f32 tensors; {name} is {w.data.dtype}")
    meta = {
        "architecture": model.arch(),
        "heads": model.heads,
        "T": model.T,
        "d_in": model.d_in,
        "num_classes": model.num_classes,
        "neuron_kind": model.neuron_kind,
        "attn_scales": [blk.attn_scale for blk in model.blocks],
        "neurons": {name: _neuron_meta(layer) for name, layer in model.spiking_layers()},
        "plan": model.plan.to_meta() if model.plan is not None else None,
        "extra": extra or {},
    }
    records = list(model.weights())
    for i, blk in enumerate(model.blocks):
        for site in sorted(blk.masks):
            records.append((f"block{i}.mask.{site}", Tensor(blk.masks[site])))
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(meta_bytes))
    out += meta_bytes
    out += struct.pack("<I", len(records))
    for name, tensor in records:
        name_b = name.encode()
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(bytes(out))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n, what):
        if self.off + n > len(self.blob):
            raise CheckpointError(
                f"{self.path}: truncated while reading {what} at byte {self.off} "
                f"(need {n}, have {len(self.blob) - self.off})"
            )
        piece = self.blob[self.off : self.off + n]
        self.off += n
        return piece

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]


def load_checkpoint(path):
    """Read a checkpoint back into (model, metadata)."""
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}, expected {VERSION}")
    meta_len = r.u32("metadata length")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: metadata is not valid JSON ({exc})") from None
    count = r.u32("tensor count")
    tensors = {}
    for i in range(count):
        name_len = r.u16(f"name length of tensor {i}")
        name = r.take(name_len, f"name of tensor {i}").decode()
        ndim = r.u8(f"rank of {name}")
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"dims of {name}"))
        n_bytes = 4 * int(np.prod(dims)) if ndim else 4
        payload = r.take(n_bytes, f"data of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if r.off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - r.off} trailing bytes after tensor records")
    return _rebuild(meta, tensors, path), meta


def _rebuild(meta, tensors, path):
    def weight(name):
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor record {name}")
        return Tensor(tensors[name], requires_grad=True)

    neurons_meta = meta["neurons"]
    blocks = []
    depth = sum(1 for k in tensors if k.endswith(".u_q") and ".mask." not in k)
    masks_by_block = {}
    for name in tensors:
        parts = name.split(".")
        if len(parts) == 3 and parts[1] == "mask":
            masks_by_block.setdefault(parts[0], {})[parts[2]] = tensors[name]
    for i in range(depth):
        tag = f"block{i}"
        neurons = {
            site: _neuron_from_meta(f"{tag}.{site}", neurons_meta[f"{tag}.{site}"])
            for site in BLOCK_NEURONS
        }
        blocks.append(
            STBlock(
                u_q=weight(f"{tag}.u_q"), u_k=weight(f"{tag}.u_k"), u_v=weight(f"{tag}.u_v"),
                m0=weight(f"{tag}.m0"), m1=weight(f"{tag}.m1"), m2=weight(f"{tag}.m2"),
                heads=meta["heads"], neurons=neurons,
                attn_scale=meta["attn_scales"][i],
                masks=masks_by_block.get(tag, {}),
            )
        )
    plan = None
    if meta.get("plan") is not None:
        plan_masks = None
        if meta["plan"]["kind"] == "l1p":
            plan_masks = {}
            for tag, masks in masks_by_block.items():
                for site, mask in masks.items():
                    plan_masks[f"{tag}.{site}"] = mask
        plan = PrunePlan.from_meta(meta["plan"], masks=plan_masks)
    return STModel(
        embed=weight("embed.w"),
        embed_neuron=_neuron_from_meta("embed", neurons_meta["embed"]),
        blocks=blocks,
        head=weight("head.w"),
        T=meta["T"],
        heads=meta["heads"],
        d_in=meta["d_in"],
        num_classes=meta["num_classes"],
        neuron_kind=meta["neuron_kind"],
        plan=plan,
    )
