"""Training pipeline: pretraining, neuron replacement, parameter
transfer, and synergistic fine-tuning.

Pretraining optimizes synaptic weights only. After pruning, every
spiking layer can be swapped to its synergistic variant (same values,
learnable time constant and threshold) and fine-tuned jointly; masks are
re-applied and intrinsics clamped after every optimizer step, so pruned
weights stay exactly zero and tau/u_th stay inside their valid ranges.

Loss is cross-entropy on the pooled logits; the learning rate follows a
cosine decay by default. The batch order is a pure function of the
config seed, so paired runs (LIF vs sLIF ablations) see identical data.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NonFiniteError, TrainingDivergedError
from .model import ForwardTrace, model_forward
from .optim import AdamW, cosine_lr
from .pruning import apply_plan, make_plan
from .tensor import Tape, Tensor, cross_entropy


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    weight_decay: float = 0.0
    seed: int = 0
    lr_schedule: str = "cosine"
    mode: str = "pretrain"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"lr_schedule must be cosine or constant, got {self.lr_schedule!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    test_acc: float
    loss: float
    lr: float
    tau: dict
    u_th: dict
    rates: dict

    def to_json(self):
        return {
            "epoch": self.epoch, "train_acc": self.train_acc, "test_acc": self.test_acc,
            "loss": self.loss, "lr": self.lr, "tau": self.tau, "u_th": self.u_th,
            "rates": self.rates,
        }


class RunLog:
    """Append-only per-epoch record with monotone epoch numbering."""

    def __init__(self):
        self.records = []

    def append(self, record):
        if self.records and record.epoch != self.records[-1].epoch + 1:
            raise ValueError(
                f"epoch {record.epoch} does not follow {self.records[-1].epoch}"
            )
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def final_train_acc(self):
        return self.records[-1].train_acc if self.records else None

    def to_jsonl(self, path):
        with open(path, "w") as f:
            for r in self.records:
                f.write(json.dumps(r.to_json(), sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path):
        log = cls()
        with open(path) as f:
            for line in f:
                d = json.loads(line)
                log.append(EpochRecord(**d))
        return log


def iterate_batches(n, batch_size, rng=None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def evaluate(model, x, y, batch_size=256):
    """Classification accuracy without recording a tape."""
    correct = 0
    for idx in iterate_batches(len(y), batch_size):
        xb = Tensor(x[:, idx], dtype=x.dtype)
        logits = model_forward(xb, model)
        correct += int((logits.data.argmax(axis=1) == y[idx]).sum())
    return correct / len(y)


def _intrinsics_snapshot(model):
    tau = {name: float(layer.params.tau.data) for name, layer in model.spiking_layers()}
    u_th = {name: float(layer.params.u_th.data) for name, layer in model.spiking_layers()}
    return tau, u_th


def _probe_rates(model, data, probe_size=64):
    n = min(probe_size, data.x_train.shape[1])
    trace = ForwardTrace()
    xb = Tensor(data.x_train[:, :n], dtype=data.x_train.dtype)
    model_forward(xb, model, trace=trace)
    return trace.rates()


def _run_training(model, data, cfg, include_intrinsics):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(31,)))
    groups = [{"params": model.weight_tensors(), "weight_decay": cfg.weight_decay}]
    intrinsics = model.intrinsic_tensors() if include_intrinsics else []
    if intrinsics:
        groups.append({"params": intrinsics, "weight_decay": 0.0})
    opt = AdamW(groups, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    log = RunLog()
    n = data.x_train.shape[1]
    best_acc, best_state = -1.0, None
    for epoch in range(cfg.epochs):
        if cfg.lr_schedule == "cosine":
            opt.lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs)
        loss_sum = 0.0
        for idx in iterate_batches(n, cfg.batch_size, rng):
            xb = Tensor(data.x_train[:, idx], dtype=data.x_train.dtype)
            yb = data.y_train[idx]
            try:
                with Tape() as tape:
                    logits = model_forward(xb, model)
                    loss = cross_entropy(logits, yb)
                tape.backward(loss)
                opt.step()
            except NonFiniteError as exc:
                err = TrainingDivergedError(
                    f"non-finite loss or update at epoch {epoch + 1} ({exc})"
                )
                err.log = log
                raise err from exc
            model.reapply_masks()
            model.clamp_intrinsics()
            loss_sum += float(loss.data) * len(idx)
        tau, u_th = _intrinsics_snapshot(model)
        train_acc = evaluate(model, data.x_train, data.y_train)
        test_acc = evaluate(model, data.x_test, data.y_test) if len(data.y_test) else float("nan")
        log.append(
            EpochRecord(
                epoch=epoch + 1, train_acc=train_acc, test_acc=test_acc,
                loss=loss_sum / n, lr=float(opt.lr), tau=tau, u_th=u_th,
                rates=_probe_rates(model, data),
            )
        )
        if train_acc > best_acc:
            best_acc, best_state = train_acc, model.snapshot()
    if best_state is not None:
        model.restore(best_state)
    return model, log


def pretrain(model, data, cfg):
    """Surrogate-gradient training of the synaptic weights; intrinsic
    parameters stay frozen. Returns the best-train-accuracy snapshot."""
    return _run_training(model, data, cfg, include_intrinsics=False)


def replace_with_slif(model):
    """Swap every spiking layer to the synergistic variant.

    Values are transferred from the originals, so the forward output is
    identical until the first optimizer step; only the learnability flags
    change.
    """
    out = model.clone()
    out.embed_neuron = out.embed_neuron.copy(learnable=True)
    for blk in out.blocks:
        for site in list(blk.neurons):
            blk.neurons[site] = blk.neurons[site].copy(learnable=True)
    out.neuron_kind = "slif"
    return out


def finetune(model, plan, data, cfg):
    """Joint weight + intrinsic fine-tuning of a pruned model.

    Masks from the plan are kept exactly zero through every step; which
    intrinsics actually move depends on the model's learnability flags
    (LIF models fine-tune weights only, the ablation arm).
    """
    if plan is not None and plan.kind == "l1p":
        for i, blk in enumerate(model.blocks):
            for name, _ in blk.weight_items():
                key = f"block{i}.{name}"
                if name not in blk.masks and key in plan.masks:
                    blk.masks[name] = plan.masks[key].copy()
    return _run_training(model, data, cfg, include_intrinsics=True)


def epochs_to_fraction(log, fraction=0.95):
    """First epoch (1-based) at which train accuracy reaches the given
    fraction of its final value."""
    accs = [r.train_acc for r in log.records]
    if not accs:
        return 0
    target = fraction * accs[-1]
    for i, a in enumerate(accs):
        if a >= target:
            return i + 1
    return len(accs)


@dataclass
class SweepRow:
    kind: str
    p: float
    seed: int
    acc_pruned: float
    acc_lif: float
    acc_slif: float
    epochs_to_95pct: int


@dataclass
class SweepReport:
    rows: list = field(default_factory=list)
    logs: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["kind", "p", "seed", "acc_pruned", "acc_lif", "acc_slif", "epochs_to_95pct"]
            )
            for r in self.rows:
                writer.writerow(
                    [r.kind, r.p, r.seed, r.acc_pruned, r.acc_lif, r.acc_slif, r.epochs_to_95pct]
                )


def sparsity_sweep(model, data, cfg, ps, kinds):
    """Prune at each (kind, p), fine-tune with LIF and with sLIF, and
    collect the recovery table.

    p = 0 is the identity plan: nothing was damaged, so no fine-tuning
    runs and all three accuracies equal the baseline.
    """
    report = SweepReport()
    for kind in kinds:
        for p in ps:
            if p == 0:
                acc = evaluate(model, data.x_train, data.y_train)
                report.rows.append(SweepRow(kind, p, cfg.seed, acc, acc, acc, 0))
                continue
            plan = make_plan(model, kind, p)
            pruned = apply_plan(model, plan)
            acc_pruned = evaluate(pruned, data.x_train, data.y_train)
            lif_model, lif_log = finetune(pruned.clone(), plan, data, replace(cfg, mode="finetune"))
            slif_model, slif_log = finetune(
                replace_with_slif(pruned), plan, data, replace(cfg, mode="finetune")
            )
            acc_lif = evaluate(lif_model, data.x_train, data.y_train)
            acc_slif = evaluate(slif_model, data.x_train, data.y_train)
            report.rows.append(
                SweepRow(kind, p, cfg.seed, acc_pruned, acc_lif, acc_slif,
                         epochs_to_fraction(slif_log))
            )
            report.logs[(kind, p)] = {"lif": lif_log, "slif": slif_log}
    return report
