"""Config-driven experiment runner.

Commands: train, evaluate, compare, gradcheck, paramcount. Every run writes
its artifacts under the configured output directory along with a manifest
recording the config hash, seeds, package version, and kernel backend.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from . import __version__
from .adapters import param_count
from .backend import BACKEND_NAME
from .autograd import gradcheck_sweep
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    ExperimentConfig,
    _layer_dims,
    apply_override,
    config_hash,
    load_config,
    serialize,
    validate,
)
from .errors import CheckpointError, ConfigError, TrainingDiverged
from .linalg import Rng, derive_seed
from .metrics import MetricsWriter, format_float
from .training import (
    build_model,
    compare_schemes,
    evaluate,
    make_data,
    make_optimizer,
    train,
)

GRADCHECK_CONFIGS = 20
GRADCHECK_TOLERANCE = 1e-4


def _write_manifest(cfg: ExperimentConfig, out_dir: str) -> None:
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"config_hash = {config_hash(cfg)}\n")
        fh.write(f"seeds = {','.join(str(s) for s in cfg.seeds)}\n")
        fh.write(f"version = {__version__}\n")
        fh.write(f"backend = {BACKEND_NAME}\n")
        fh.write(f"python = {sys.version.split()[0]}\n")
    with open(os.path.join(out_dir, "config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(serialize(cfg))


def _report_dict(report) -> dict:
    out = {
        "scheme": report.scheme,
        "seed": report.seed,
        "steps": report.steps,
        "per_task_loss": report.per_task_loss,
        "mean_loss": report.mean_loss,
        "param_count": report.param_count,
        "wall_clock_s": report.wall_clock_s,
    }
    if report.gate_stats is not None:
        out["gate_mean_weights"] = report.gate_stats.mean_weights
        out["gate_mean_entropy"] = report.gate_stats.mean_entropy
    return out


def _cmd_train(cfg: ExperimentConfig) -> int:
    seed = cfg.seeds[0]
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_manifest(cfg, cfg.out_dir)
    data = make_data(cfg, seed)
    model = build_model(cfg.scheme, cfg, data, seed)
    opt = make_optimizer(cfg.optimizer)
    start_step = 0
    data_rng = Rng(derive_seed(seed, "train"))
    if cfg.resume:
        start_step, data_rng = load_checkpoint(model, opt, cfg.resume)
        print(f"resumed from {cfg.resume} at step {start_step}")
    metrics_path = os.path.join(cfg.out_dir, "metrics.ndjson")
    try:
        with MetricsWriter(metrics_path) as metrics:
            report = train(model, data, opt, cfg.steps, seed,
                           batch_size=cfg.batch_size, eval_batches=cfg.eval_batches,
                           scheme_name=cfg.scheme, record=metrics.write,
                           start_step=start_step, data_rng=data_rng)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    save_checkpoint(model, opt, data_rng, start_step + cfg.steps,
                    os.path.join(cfg.out_dir, "checkpoint.asym"))
    with open(os.path.join(cfg.out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(_report_dict(report), fh, indent=2)
    print(f"scheme {cfg.scheme}  seed {seed}  steps {report.steps}  "
          f"params {report.param_count}")
    for i, l in enumerate(report.per_task_loss):
        print(f"  task {i} held-out mse {format_float(l)}")
    print(f"  mean held-out mse {format_float(report.mean_loss)}")
    return 0


def _cmd_evaluate(cfg: ExperimentConfig) -> int:
    if not cfg.checkpoint:
        raise ConfigError("[experiment] checkpoint: required for evaluate")
    seed = cfg.seeds[0]
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_manifest(cfg, cfg.out_dir)
    data = make_data(cfg, seed)
    model = build_model(cfg.scheme, cfg, data, seed)
    opt = make_optimizer(cfg.optimizer)
    step, _ = load_checkpoint(model, opt, cfg.checkpoint)
    losses = evaluate(model, data, cfg.eval_batches, seed, cfg.batch_size)
    with MetricsWriter(os.path.join(cfg.out_dir, "metrics.ndjson")) as metrics:
        for i, l in enumerate(losses):
            metrics.write({"kind": "eval", "scheme": cfg.scheme, "seed": seed,
                           "step": step, "task": i, "loss": l})
    for i, l in enumerate(losses):
        print(f"task {i} held-out mse {format_float(l)}")
    print(f"mean held-out mse {format_float(sum(losses) / len(losses))}")
    return 0


def _cmd_compare(cfg: ExperimentConfig) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_manifest(cfg, cfg.out_dir)
    result = compare_schemes(cfg)
    with MetricsWriter(os.path.join(cfg.out_dir, "metrics.ndjson")) as metrics:
        for rec in result.records:
            metrics.write(rec)

    n_tasks = cfg.num_tasks
    csv_path = os.path.join(cfg.out_dir, "comparison.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "seed", "mean_loss", "param_count"]
                        + [f"task{i}_loss" for i in range(n_tasks)])
        for cell in result.cells:
            if cell.report is None:
                writer.writerow([cell.scheme, cell.seed, "diverged", "", *[""] * n_tasks])
            else:
                writer.writerow([cell.scheme, cell.seed,
                                 format_float(cell.report.mean_loss),
                                 cell.report.param_count,
                                 *[format_float(l) for l in cell.report.per_task_loss]])
        for scheme in cfg.schemes:
            if any(c.report is not None for c in result.cells if c.scheme == scheme):
                writer.writerow([scheme, "mean", format_float(result.mean_loss(scheme)),
                                 "", *[""] * n_tasks])
                writer.writerow([scheme, "std", format_float(result.std_loss(scheme)),
                                 "", *[""] * n_tasks])

    failed = [c for c in result.cells if c.report is None]
    for cell in failed:
        print(f"cell {cell.scheme}/seed{cell.seed} diverged: {cell.error}", file=sys.stderr)
    for scheme in cfg.schemes:
        if any(c.report is not None for c in result.cells if c.scheme == scheme):
            print(f"{scheme:16s} mean {format_float(result.mean_loss(scheme))} "
                  f"+/- {format_float(result.std_loss(scheme))}")
    if "asym_lora" in cfg.schemes and "lora" in cfg.schemes:
        asym = result.seed_losses("asym_lora")
        lora = result.seed_losses("lora")
        wins = sum(1 for s in asym if s in lora and asym[s] < lora[s])
        print(f"asym_lora < lora on {wins}/{len(asym)} seeds")
    if "asym_lora" in cfg.schemes and "moe_lora" in cfg.schemes:
        rel = result.mean_loss("asym_lora") <= result.mean_loss("moe_lora")
        print(f"asym_lora <= moe_lora on seed means: {rel}")
    print(f"wrote {csv_path}")
    return 1 if failed else 0


def _cmd_gradcheck(cfg: ExperimentConfig) -> int:
    seed = cfg.seeds[0]
    worst_overall = 0.0
    for scheme in cfg.schemes:
        worst = gradcheck_sweep(scheme, GRADCHECK_CONFIGS, seed)
        worst_overall = max(worst_overall, worst)
        status = "ok" if worst < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{scheme:16s} max relative error {format_float(worst)}  {status}")
    if worst_overall >= GRADCHECK_TOLERANCE:
        print(f"gradcheck failed: {format_float(worst_overall)} >= {GRADCHECK_TOLERANCE}",
              file=sys.stderr)
        return 1
    return 0


def _cmd_paramcount(cfg: ExperimentConfig) -> int:
    dims = _layer_dims(cfg)
    sites = (range(len(dims)) if cfg.adapt_layers is None else cfg.adapt_layers)
    for scheme in cfg.schemes:
        total = 0
        parts = []
        for idx in sites:
            d_in, d_out = dims[idx]
            pc = param_count(scheme, d_in, d_out, cfg.rank, cfg.num_tasks, cfg.num_experts)
            total += pc.total
            parts.append(f"layer{idx}={pc.total}(a:{pc.a} b:{pc.b} gate:{pc.gate})")
        print(f"{scheme:16s} total {total}  " + "  ".join(parts))
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
    "gradcheck": _cmd_gradcheck,
    "paramcount": _cmd_paramcount,
}


def _add_common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a config file (defaults apply if omitted)")
    p.add_argument("--seed", type=int, help="override: run with this single seed")
    p.add_argument("--out", help="override: output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable), e.g. --set rank=8")
    p.add_argument("--scheme", help="override: adapter scheme")
    p.add_argument("--steps", type=int, help="override: training steps")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="asymlora",
                                     description="adapter-scheme experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        _add_common_args(sub.add_parser(name))
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        for assignment in args.set:
            apply_override(cfg, assignment)
        if args.scheme is not None:
            cfg.scheme = args.scheme
            cfg.schemes = [args.scheme]
        if args.steps is not None:
            cfg.steps = args.steps
        if args.seed is not None:
            cfg.seeds = [args.seed]
        if args.out is not None:
            cfg.out_dir = args.out
        validate(cfg)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
