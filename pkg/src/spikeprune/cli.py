"""Command-line workbench.

Subcommands cover the full pipeline: train a baseline, prune it, run
compensation fine-tuning, evaluate, sweep sparsities, and the analysis
suite (rollout, rates, currents, energy, compression). Stages hand off
through checkpoints, so a chained run reproduces the in-process
pipeline exactly for a fixed seed.

Exit codes: 0 success, 2 configuration/usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import analysis as ana
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, build_dataset, load_config, parse_config
from .errors import SpikePruneError, ConfigError
from .model import build_model, count_params
from .pruning import apply_plan, make_plan, random_plan
from .training import (
    evaluate,
    finetune,
    pretrain,
    replace_with_slif,
    sparsity_sweep,
)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="spikeprune",
        description="Spiking-transformer pruning and compensation workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory for artifacts")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="model checkpoint to load")

    p = sub.add_parser("train", help="pretrain a baseline model")
    common(p)
    p.add_argument("--epochs", type=int, help="override training epochs")

    p = sub.add_parser("prune", help="prune a pretrained checkpoint")
    common(p, checkpoint=True)
    p.add_argument("--kind", choices=("l1p", "dsp"), help="pruning strategy")
    p.add_argument("--p", type=float, help="pruning sparsity in [0, 1]")
    p.add_argument("--random", action="store_true", help="random selection at the same geometry")

    p = sub.add_parser("compensate", help="fine-tune a pruned checkpoint")
    common(p, checkpoint=True)
    p.add_argument("--neuron", choices=("lif", "slif"), default="slif")
    p.add_argument("--epochs", type=int, help="override fine-tune epochs")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the config dataset")
    common(p, checkpoint=True)

    p = sub.add_parser("sweep", help="sparsity sweep with LIF/sLIF compensation")
    common(p)
    p.add_argument("--checkpoint", help="pretrained baseline (else trains one)")
    p.add_argument("--ps", default="0.5,0.8", help="comma-separated sparsities")
    p.add_argument("--kinds", default="l1p,dsp", help="comma-separated strategies")
    p.add_argument("--epochs", type=int, help="override fine-tune epochs")

    p = sub.add_parser("rollout", help="attention rollout saliency for one sample")
    common(p, checkpoint=True)
    p.add_argument("--discard-ratio", type=float, default=None)
    p.add_argument("--sample", type=int, default=0)

    p = sub.add_parser("analyze", help="rates, currents, energy, compression")
    common(p, checkpoint=True)
    p.add_argument("--baseline", help="baseline checkpoint for ratio reporting")

    p = sub.add_parser("info", help="describe a checkpoint")
    p.add_argument("--checkpoint", required=True)
    return parser


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else parse_config({})
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        cfg.finetune = dataclasses.replace(cfg.finetune, seed=args.seed)
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    return cfg


def _out_dir(cfg):
    out = cfg.out_dir or "runs/default"
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _model_from_cfg(cfg, data, neuron="lif"):
    return build_model(
        cfg.architecture, d_in=data.d_in, num_classes=data.num_classes, T=cfg.T,
        heads=cfg.heads, neuron=neuron, tau=cfg.neuron.tau, u_th=cfg.neuron.u_th,
        u_rest=cfg.neuron.u_rest, reset_mode=cfg.neuron.reset_mode,
        surrogate_width=cfg.neuron.surrogate_width, seed=cfg.seed,
        init_gain=cfg.init_gain,
    )


def _eval_both(model, data):
    return {
        "train_acc": evaluate(model, data.x_train, data.y_train),
        "test_acc": evaluate(model, data.x_test, data.y_test),
    }


def cmd_train(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    data = build_dataset(cfg)
    if args.epochs is not None:
        cfg.train = dataclasses.replace(cfg.train, epochs=args.epochs)
    model = _model_from_cfg(cfg, data)
    model, log = pretrain(model, data, cfg.train)
    metrics = _eval_both(model, data)
    total, st = count_params(model)
    _write_json(os.path.join(out, "config.json"), cfg.to_json())
    log.to_jsonl(os.path.join(out, "pretrain_log.jsonl"))
    save_checkpoint(
        model, os.path.join(out, "pretrain_best.stlw"),
        extra={"stage": "pretrain", "epoch": len(log), "metrics": metrics,
               "baseline_params": {"total": total, "st": st}},
    )
    print(f"pretrained {model.arch()}: train_acc={metrics['train_acc']:.4f} "
          f"test_acc={metrics['test_acc']:.4f} -> {out}/pretrain_best.stlw")
    return 0


def cmd_prune(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    data = build_dataset(cfg)
    model, meta = load_checkpoint(args.checkpoint)
    kind = args.kind or cfg.prune.kind
    p = args.p if args.p is not None else cfg.prune.p
    if args.random:
        plan = random_plan(model, p, kind, cfg.seed)
    else:
        plan = make_plan(model, kind, p)
    pruned = apply_plan(model, plan)
    metrics = _eval_both(pruned, data)
    total, st = count_params(pruned)
    tag = f"{'rand_' if args.random else ''}{kind}_p{int(round(p * 100)):02d}"
    path = os.path.join(out, f"pruned_{tag}.stlw")
    save_checkpoint(
        pruned, path,
        extra={"stage": "prune", "metrics": metrics,
               "params": {"total": total, "st": st},
               "baseline_params": meta["extra"].get("baseline_params")},
    )
    print(f"pruned {kind} p={p}: train_acc={metrics['train_acc']:.4f} "
          f"st_params={st} -> {path}")
    return 0


def cmd_compensate(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    data = build_dataset(cfg)
    model, meta = load_checkpoint(args.checkpoint)
    if args.epochs is not None:
        cfg.finetune = dataclasses.replace(cfg.finetune, epochs=args.epochs)
    if args.neuron == "slif":
        model = replace_with_slif(model)
    model, log = finetune(model, model.plan, data, cfg.finetune)
    metrics = _eval_both(model, data)
    log.to_jsonl(os.path.join(out, f"finetune_{args.neuron}_log.jsonl"))
    path = os.path.join(out, f"compensated_{args.neuron}.stlw")
    save_checkpoint(
        model, path,
        extra={"stage": "compensate", "neuron": args.neuron, "epoch": len(log),
               "metrics": metrics,
               "baseline_params": meta["extra"].get("baseline_params")},
    )
    print(f"compensated ({args.neuron}): train_acc={metrics['train_acc']:.4f} -> {path}")
    return 0


def cmd_eval(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    data = build_dataset(cfg)
    model, _ = load_checkpoint(args.checkpoint)
    metrics = _eval_both(model, data)
    _write_json(os.path.join(out, "eval.json"), metrics)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_sweep(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    data = build_dataset(cfg)
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
    else:
        model, _ = pretrain(_model_from_cfg(cfg, data), data, cfg.train)
    if args.epochs is not None:
        cfg.finetune = dataclasses.replace(cfg.finetune, epochs=args.epochs)
    ps = [float(s) for s in args.ps.split(",") if s != ""]
    kinds = [s.strip() for s in args.kinds.split(",") if s.strip()]
    report = sparsity_sweep(model, data, cfg.finetune, ps, kinds)
    path = os.path.join(out, "sweep.csv")
    report.to_csv(path)
    print(f"{len(report.rows)} sweep rows -> {path}")
    return 0


def cmd_rollout(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    data = build_dataset(cfg)
    model, _ = load_checkpoint(args.checkpoint)
    ratio = args.discard_ratio if args.discard_ratio is not None else cfg.analysis.discard_ratio
    batch = min(8, data.x_test.shape[1]) or 1
    x = data.x_test[:, :batch] if data.x_test.shape[1] else data.x_train[:, :batch]
    maps = ana.collect_attention(model, x, sample=args.sample)
    mask = ana.attention_rollout(maps, discard_ratio=ratio)
    size = cfg.analysis.image_size
    img = ana.upsample_mask(mask.values, (size, size))
    ana.save_pgm(os.path.join(out, "rollout.pgm"), img)
    ana.save_mask_csv(os.path.join(out, "rollout.csv"), mask.values)
    print(f"rollout over {mask.layers} blocks, {mask.values.size} patches -> {out}/rollout.pgm")
    return 0


def cmd_analyze(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    data = build_dataset(cfg)
    model, meta = load_checkpoint(args.checkpoint)
    batch = min(64, data.x_train.shape[1])
    x = data.x_train[:, :batch]
    em = ana.EnergyModel(e_mac=cfg.analysis.e_mac, e_ac=cfg.analysis.e_ac)

    rates = ana.firing_rates(model, x)
    with open(os.path.join(out, "firing_rates.csv"), "w") as f:
        f.write("layer,rate\n")
        for name, rate in rates.per_layer.items():
            f.write(f"{name},{rate!r}\n")
        f.write(f"st_aggregate,{rates.st_aggregate!r}\n")

    hist = ana.current_histogram(model, x, cfg.analysis.current_layer,
                                 bins=cfg.analysis.histogram_bins)
    with open(os.path.join(out, "current_histogram.csv"), "w") as f:
        f.write(f"# layer={hist.layer} mean={hist.mean!r} variance={hist.variance!r}\n")
        f.write("bin_left,bin_right,density\n")
        for left, right, dens in zip(hist.edges[:-1], hist.edges[1:], hist.density):
            f.write(f"{left!r},{right!r},{dens!r}\n")

    reference = None
    baseline_counts = meta["extra"].get("baseline_params")
    if args.baseline:
        reference, _ = load_checkpoint(args.baseline)
    energy = ana.estimate_energy(model, x, em, reference=reference)
    _write_json(os.path.join(out, "energy.json"), energy.to_json())

    report = {"params": dict(zip(("total", "st"), count_params(model)))}
    if reference is not None:
        report["compression"] = ana.compression_report(reference, model)
    elif baseline_counts:
        total, st = count_params(model)
        report["compression"] = {
            "cr_total_pct": 100.0 * (1.0 - total / baseline_counts["total"]),
            "cr_st_pct": 100.0 * (1.0 - st / baseline_counts["st"]),
        }
    _write_json(os.path.join(out, "compression.json"), report)
    print(f"analysis artifacts -> {out}")
    return 0


def cmd_info(args):
    model, meta = load_checkpoint(args.checkpoint)
    total, st = count_params(model)
    lines = [
        f"architecture: {meta['architecture']}",
        f"neuron: {meta['neuron_kind']}  T={meta['T']}  heads={meta['heads']}",
        f"params: total={total} st_blocks={st}",
    ]
    plan = meta.get("plan")
    if plan:
        lines.append(f"plan: {plan['kind']} p={plan['p']}")
    baseline = meta["extra"].get("baseline_params")
    if baseline:
        lines.append(
            "compression vs baseline: "
            f"total={100.0 * (1.0 - total / baseline['total']):.2f}% "
            f"st={100.0 * (1.0 - st / baseline['st']):.2f}%"
        )
    print("\n".join(lines))
    return 0


_COMMANDS = {
    "train": cmd_train,
    "prune": cmd_prune,
    "compensate": cmd_compensate,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "rollout": cmd_rollout,
    "analyze": cmd_analyze,
    "info": cmd_info,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SpikePruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
