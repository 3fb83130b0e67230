"""Experiment configuration.

Configs are JSON documents parsed strictly: a misspelled or unknown key
anywhere in the tree aborts before any compute. The seed fully
determines dataset content, encoding noise, weight init, and batch
order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .data import Dataset, load_idx_images, synth_dataset
from .errors import ConfigError
from .training import TrainConfig

_MISSING = object()


class _Section:
    """Dict view that tracks consumed keys and rejects leftovers."""

    def __init__(self, doc, name):
        if not isinstance(doc, dict):
            raise ConfigError(f"{name}: expected an object, got {type(doc).__name__}")
        self._doc = dict(doc)
        self._name = name

    def take(self, key, default=_MISSING):
        if key in self._doc:
            return self._doc.pop(key)
        if default is _MISSING:
            raise ConfigError(f"{self._name}: missing required key {key!r}")
        return default

    def section(self, key, default=_MISSING):
        return _Section(self.take(key, default), f"{self._name}.{key}")

    def finish(self):
        if self._doc:
            raise ConfigError(f"{self._name}: unknown keys {sorted(self._doc)}")


@dataclass
class SyntheticSpec:
    classes: int = 4
    patches: int = 16
    d_in: int = 32
    n_train: int = 256
    n_test: int = 128
    r_high: float = 0.5
    r_low: float = 0.15


@dataclass
class IdxSpec:
    images: str
    labels: str
    patch_size: int = 4
    test_fraction: float = 0.2
    limit: int = None


@dataclass
class PruneSpec:
    kind: str = "l1p"
    p: float = 0.8

    def __post_init__(self):
        if self.kind not in ("l1p", "dsp"):
            raise ConfigError(f"prune kind must be l1p or dsp, got {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"prune sparsity must lie in [0, 1], got {self.p}")


@dataclass
class NeuronSpec:
    tau: float = 2.0
    u_th: float = 1.0
    u_rest: float = 0.0
    reset_mode: str = "soft"
    surrogate_width: float = 2.0


@dataclass
class AnalysisSpec:
    discard_ratio: float = 0.85
    histogram_bins: int = 50
    current_layer: str = "block0.attn"
    e_mac: float = 4.6
    e_ac: float = 0.9
    image_size: int = 32


@dataclass
class ExperimentConfig:
    architecture: str = "Spikformer-2-32-128"
    heads: int = 4
    encoding: str = "rate"
    T: int = 4
    seed: int = 0
    init_gain: float = 3.5
    dataset: object = field(default_factory=SyntheticSpec)
    neuron: NeuronSpec = field(default_factory=NeuronSpec)
    train: TrainConfig = None
    finetune: TrainConfig = None
    prune: PruneSpec = field(default_factory=PruneSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    out_dir: str = None

    def to_json(self):
        doc = {
            "architecture": self.architecture,
            "heads": self.heads,
            "encoding": self.encoding,
            "T": self.T,
            "seed": self.seed,
            "init_gain": self.init_gain,
            "dataset": dict(
                asdict(self.dataset),
                type="synthetic" if isinstance(self.dataset, SyntheticSpec) else "idx",
            ),
            "neuron": asdict(self.neuron),
            "train": asdict(self.train),
            "finetune": asdict(self.finetune),
            "prune": asdict(self.prune),
            "analysis": asdict(self.analysis),
            "out_dir": self.out_dir,
        }
        return doc


def _train_section(sec, seed, defaults):
    cfg = TrainConfig(
        epochs=int(sec.take("epochs", defaults["epochs"])),
        batch_size=int(sec.take("batch_size", defaults["batch_size"])),
        learning_rate=float(sec.take("learning_rate", defaults["learning_rate"])),
        weight_decay=float(sec.take("weight_decay", defaults["weight_decay"])),
        lr_schedule=sec.take("lr_schedule", defaults["lr_schedule"]),
        mode=defaults["mode"],
        seed=seed,
    )
    sec.finish()
    return cfg


TRAIN_DEFAULTS = dict(epochs=30, batch_size=32, learning_rate=0.01,
                      weight_decay=0.0, lr_schedule="cosine", mode="pretrain")
FINETUNE_DEFAULTS = dict(epochs=15, batch_size=32, learning_rate=0.003,
                         weight_decay=0.0, lr_schedule="cosine", mode="finetune")


def parse_config(doc):
    root = _Section(doc, "config")
    architecture = root.take("architecture", "Spikformer-2-32-128")
    heads = int(root.take("heads", 4))
    encoding = root.take("encoding", "rate")
    if encoding not in ("rate", "direct"):
        raise ConfigError(f"encoding must be rate or direct, got {encoding!r}")
    T = int(root.take("T", 4))
    seed = int(root.take("seed", 0))
    init_gain = float(root.take("init_gain", 3.5))
    out_dir = root.take("out_dir", None)

    ds_sec = root.section("dataset", {})
    ds_kind = ds_sec.take("type", "synthetic")
    if ds_kind == "synthetic":
        dataset = SyntheticSpec(
            classes=int(ds_sec.take("classes", 4)),
            patches=int(ds_sec.take("patches", 16)),
            d_in=int(ds_sec.take("d_in", 32)),
            n_train=int(ds_sec.take("n_train", 256)),
            n_test=int(ds_sec.take("n_test", 128)),
            r_high=float(ds_sec.take("r_high", 0.5)),
            r_low=float(ds_sec.take("r_low", 0.15)),
        )
    elif ds_kind == "idx":
        dataset = IdxSpec(
            images=ds_sec.take("images"),
            labels=ds_sec.take("labels"),
            patch_size=int(ds_sec.take("patch_size", 4)),
            test_fraction=float(ds_sec.take("test_fraction", 0.2)),
            limit=ds_sec.take("limit", None),
        )
    else:
        raise ConfigError(f"dataset type must be synthetic or idx, got {ds_kind!r}")
    ds_sec.finish()

    n_sec = root.section("neuron", {})
    neuron = NeuronSpec(
        tau=float(n_sec.take("tau", 2.0)),
        u_th=float(n_sec.take("u_th", 1.0)),
        u_rest=float(n_sec.take("u_rest", 0.0)),
        reset_mode=n_sec.take("reset_mode", "soft"),
        surrogate_width=float(n_sec.take("surrogate_width", 2.0)),
    )
    n_sec.finish()

    train = _train_section(root.section("train", {}), seed, TRAIN_DEFAULTS)
    finetune = _train_section(root.section("finetune", {}), seed, FINETUNE_DEFAULTS)

    p_sec = root.section("prune", {})
    prune = PruneSpec(kind=p_sec.take("kind", "l1p"), p=float(p_sec.take("p", 0.8)))
    p_sec.finish()

    a_sec = root.section("analysis", {})
    analysis = AnalysisSpec(
        discard_ratio=float(a_sec.take("discard_ratio", 0.85)),
        histogram_bins=int(a_sec.take("histogram_bins", 50)),
        current_layer=a_sec.take("current_layer", "block0.attn"),
        e_mac=float(a_sec.take("e_mac", 4.6)),
        e_ac=float(a_sec.take("e_ac", 0.9)),
        image_size=int(a_sec.take("image_size", 32)),
    )
    a_sec.finish()
    root.finish()

    return ExperimentConfig(
        architecture=architecture, heads=heads, encoding=encoding, T=T, seed=seed,
        init_gain=init_gain, dataset=dataset, neuron=neuron, train=train,
        finetune=finetune, prune=prune, analysis=analysis, out_dir=out_dir,
    )


def load_config(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc)


def build_dataset(cfg) -> Dataset:
    """Materialize the dataset a config describes (pure in cfg.seed)."""
    spec = cfg.dataset
    if isinstance(spec, SyntheticSpec):
        return synth_dataset(
            classes=spec.classes, patches=spec.patches, d_in=spec.d_in, T=cfg.T,
            n_train=spec.n_train, n_test=spec.n_test,
            r_high=spec.r_high, r_low=spec.r_low, seed=cfg.seed,
        )
    return load_idx_images(
        spec.images, spec.labels, cfg.encoding, cfg.T, cfg.seed,
        patch_size=spec.patch_size, test_fraction=spec.test_fraction, limit=spec.limit,
    )
