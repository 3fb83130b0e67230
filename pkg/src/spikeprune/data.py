"""Dataset generation and ingestion.

The synthetic task is the primary acceptance vehicle: each class owns a
distinct group of patches that fire at a high Bernoulli rate while the
rest fire at a low rate. IDX image pairs (the common big-endian u8
format) can be ingested for small real image sets; static intensities
are rate-coded (Bernoulli per step) or direct-coded (frame repeated).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Encoded spike tensors in the canonical [T, n, N, d_in] layout."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self):
        return int(self.meta.get("classes", int(self.y_train.max()) + 1))

    @property
    def d_in(self):
        return self.x_train.shape[3]

    @property
    def patches(self):
        return self.x_train.shape[2]


def _balanced_labels(n, classes, rng):
    """Class counts within one of n/classes, order shuffled."""
    counts = [n // classes + (1 if i < n % classes else 0) for i in range(classes)]
    labels = np.concatenate([np.full(c, i, dtype=np.int64) for i, c in enumerate(counts)])
    rng.shuffle(labels)
    return labels


def synth_dataset(classes, patches, d_in, T, n_train, n_test,
                  r_high=0.8, r_low=0.05, seed=0):
    """Labeled spike tensors for the patch-group rate task.

    Class k is defined by a distinct contiguous group of patches emitting
    Bernoulli(r_high) spikes on the rate features while the rest emit
    Bernoulli(r_low). The trailing ``patches`` features of each patch
    carry an always-on identity flag (a one-hot patch index): the encoder
    is permutation-equivariant over patches and pools them away, so patch
    identity must ride in the spike data itself for the class signal to
    survive global averaging.
    """
    if classes < 2:
        raise ConfigError(f"need at least 2 classes, got {classes}")
    if patches < classes:
        raise ConfigError(f"need at least one patch per class, got {patches} for {classes}")
    if d_in <= patches:
        raise ConfigError(
            f"d_in must exceed the patch count ({patches}) to fit the identity flags, got {d_in}"
        )
    if not (0.0 <= r_low < r_high <= 1.0):
        raise ConfigError(f"rates must satisfy 0 <= r_low < r_high <= 1, got {r_low}, {r_high}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(41,)))
    group = patches // classes
    d_rate = d_in - patches

    def make_split(n):
        labels = _balanced_labels(n, classes, rng)
        prob = np.zeros((n, patches, d_in), dtype=np.float32)
        prob[:, :, :d_rate] = r_low
        for i, lab in enumerate(labels):
            prob[i, lab * group : (lab + 1) * group, :d_rate] = r_high
        for j in range(patches):
            prob[:, j, d_rate + j] = 1.0
        draws = rng.random((T, n, patches, d_in), dtype=np.float32)
        return (draws < prob[None, :, :, :]).astype(np.float32), labels

    x_train, y_train = make_split(n_train)
    x_test, y_test = make_split(n_test)
    meta = {
        "kind": "synthetic", "classes": classes, "patches": patches, "d_in": d_in,
        "T": T, "r_high": r_high, "r_low": r_low, "seed": seed,
    }
    return Dataset(x_train, y_train, x_test, y_test, meta)


def class_prototypes(classes, patches, d_in, r_high, r_low):
    """Expected per-patch, per-feature rate pattern for each class (the
    independent nearest-prototype oracle for the synthetic task)."""
    group = patches // classes
    d_rate = d_in - patches
    protos = np.zeros((classes, patches, d_in), dtype=np.float64)
    protos[:, :, :d_rate] = r_low
    for k in range(classes):
        protos[k, k * group : (k + 1) * group, :d_rate] = r_high
        protos[k, :, d_rate:] = np.eye(patches)
    return protos


def encode_rate(frames, T, seed):
    """Intensities in [0, 1] -> Bernoulli spikes per step: [T, n, N, d]."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(43,)))
    draws = rng.random((T,) + frames.shape, dtype=np.float32)
    return (draws < frames[None]).astype(np.float32)


def encode_direct(frames, T):
    """Repeat the frame at every step: [T, n, N, d]."""
    return np.broadcast_to(frames[None], (T,) + frames.shape).astype(np.float32).copy()


def _read_exact(f, count, path, what):
    data = f.read(count)
    if len(data) != count:
        raise FormatError(
            f"{path}: truncated {what} at byte {f.tell() - len(data)}: "
            f"wanted {count} bytes, got {len(data)}"
        )
    return data


def _read_idx(path, expect_magic, ndim):
    with open(path, "rb") as f:
        magic = struct.unpack(">I", _read_exact(f, 4, path, "magic"))[0]
        if magic != expect_magic:
            raise FormatError(
                f"{path}: bad magic 0x{magic:08x} at byte 0, expected 0x{expect_magic:08x}"
            )
        dims = struct.unpack(f">{ndim}I", _read_exact(f, 4 * ndim, path, "dimension header"))
        total = int(np.prod(dims))
        payload = _read_exact(f, total, path, "payload")
        trailing = f.read(1)
        if trailing:
            raise FormatError(f"{path}: {len(trailing)}+ unexpected bytes at byte {f.tell() - 1}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def patchify(images, patch_size):
    """[n, H, W] -> [n, N, patch_size**2] row-major patch grid."""
    n, h, w = images.shape
    if h % patch_size or w % patch_size:
        raise ConfigError(f"image size {h}x{w} is not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(n, gh, patch_size, gw, patch_size)
    x = x.transpose(0, 1, 3, 2, 4)
    return x.reshape(n, gh * gw, patch_size * patch_size)


def load_idx_images(images_path, labels_path, encoding, T, seed,
                    patch_size=4, test_fraction=0.2, limit=None):
    """IDX image/label pair -> encoded, patchified Dataset."""
    if encoding not in ("rate", "direct"):
        raise ConfigError(f"encoding must be 'rate' or 'direct', got {encoding!r}")
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{images_path}: {images.shape[0]} images but {labels.shape[0]} labels"
        )
    if limit is not None:
        images = images[:limit]
        labels = labels[:limit]
    frames = patchify(images.astype(np.float32) / 255.0, patch_size)
    n = frames.shape[0]
    n_test = int(round(n * test_fraction))
    n_train = n - n_test
    if encoding == "rate":
        spikes = encode_rate(frames, T, seed)
    else:
        spikes = encode_direct(frames, T)
    y = labels.astype(np.int64)
    meta = {
        "kind": "idx", "classes": int(y.max()) + 1, "patches": frames.shape[1],
        "d_in": frames.shape[2], "T": T, "encoding": encoding,
        "patch_size": patch_size, "seed": seed,
    }
    return Dataset(
        spikes[:, :n_train], y[:n_train], spikes[:, n_train:], y[n_train:], meta
    )


def write_idx_images(path, images):
    """Inverse of the IDX image reader (used by tests and tooling)."""
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())
