"""Command-line surface: dataset synthesis, training, evaluation, and
parameter accounting.

    molre synth        --config c.cfg [--set k=v ...] [--seed N] [--out DIR]
    molre train        --config c.cfg [--set k=v ...] [--seed N] [--out DIR]
    molre eval         --checkpoint best.ckpt [--split test] [--out DIR]
    molre count-params [--config c.cfg] [--set k=v ...]

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .metrics import evaluate, format_param_table, param_report, write_report
from .synthetic import SynthConfig, class_prevalences, synth_sample
from .training import NumericalAbort, Trainer, build_model, predict_probs
from .volumes import DataError, DiskDataset, write_manifest, write_volume

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = apply_overrides(cfg, args.set or [])
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg.validate()


def _split_counts(n: int, cfg: RunConfig) -> tuple[int, int]:
    n_train = int(n * cfg.train_frac)
    n_val = int(n * cfg.val_frac)
    if n_train < 1 or n_val < 1 or n_train + n_val >= n:
        raise ConfigError(
            f"split fractions {cfg.train_frac}/{cfg.val_frac}/{cfg.test_frac} "
            f"leave no usable train/val/test split for n={n}"
        )
    return n_train, n_val


def cmd_synth(cfg: RunConfig) -> int:
    out_dir = Path(cfg.data_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scfg = SynthConfig(
        num_classes=cfg.num_classes,
        shape=tuple(cfg.volume_shape),
        spacing=tuple(cfg.spacing),
    )
    n = cfg.num_samples
    n_train, n_val = _split_counts(n, cfg)
    rows = []
    for i in range(n):
        sample = synth_sample(i, scfg, cfg.data_seed)
        fname = f"{sample.sample_id}.vol"
        write_volume(out_dir / fname, sample)
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        rows.append(
            {
                "id": sample.sample_id,
                "split": split,
                "labels": [int(x) for x in sample.labels],
                "file": fname,
                "stream": sample.stream_id,
            }
        )
    labels = np.array([r["labels"] for r in rows], dtype=np.float64)
    manifest = {
        "format_version": 1,
        "num_classes": cfg.num_classes,
        "volume_shape": list(cfg.volume_shape),
        "spacing": list(cfg.spacing),
        "seed": cfg.data_seed,
        "target_prevalence": [float(p) for p in class_prevalences(scfg)],
        "prevalence": [float(p) for p in labels.mean(axis=0)],
        "samples": rows,
    }
    write_manifest(out_dir, manifest)
    print(f"wrote {n} volumes + manifest to {out_dir}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    if not cfg.data_dir:
        raise DataError("train needs data_dir pointing at a synthesized dataset")
    train_data = DiskDataset(cfg.data_dir, "train")
    val_data = DiskDataset(cfg.data_dir, "val")
    run_dir = Path(cfg.out_dir)
    trainer = Trainer(cfg, train_data, val_data, run_dir=run_dir)
    result = trainer.train()
    trainer.save_state(run_dir / "last.ckpt")
    print(
        f"stopped at epoch {result.stopped_epoch}; "
        f"best val mean AUC {result.best_val_auc:.4f} at epoch {result.best_epoch}; "
        f"checkpoints in {run_dir}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    tensors, sections = load_checkpoint(args.checkpoint)
    cfg = RunConfig.from_dict(sections["config"])
    cfg = apply_overrides(cfg, args.set or [])
    model = build_model(cfg)
    for name, t in model.parameters().items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        t.data[...] = tensors[name]
    if not cfg.data_dir:
        raise DataError("checkpoint config has no data_dir; pass --set data_dir=...")
    dataset = DiskDataset(cfg.data_dir, args.split)
    probs = predict_probs(model, dataset)
    report = evaluate(probs, dataset.labels, param_report(model))
    out_dir = Path(args.out or cfg.out_dir)
    write_report(report, out_dir)
    print(
        f"{args.split}: mean AUC {report.mean_auc:.4f} ± {report.std_auc:.4f} "
        f"over {sum(a is not None for a in report.per_class_auc)} classes; "
        f"high {report.bucket_high}, mid {report.bucket_mid}; reports in {out_dir}"
    )
    return EXIT_OK


def cmd_count_params(cfg: RunConfig) -> int:
    model = build_model(cfg)
    print(format_param_table(param_report(model)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="molre",
        description="Mixture-of-low-rank-experts adapters over frozen backbones.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, out=True):
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument(
            "--set", action="append", metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        if seed:
            p.add_argument("--seed", type=int, help="override the run seed")
        if out:
            p.add_argument("--out", help="override the output directory")

    common(sub.add_parser("synth", help="generate a synthetic dataset"))
    common(sub.add_parser("train", help="train one run per the protocol"))
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p_eval.add_argument("--checkpoint", required=True, help="path to a .ckpt file")
    p_eval.add_argument("--split", default="test", choices=("train", "val", "test"))
    p_eval.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    p_eval.add_argument("--out", help="directory for report files")
    common(sub.add_parser("count-params", help="print the parameter table"), seed=False, out=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        if args.command == "eval":
            return cmd_eval(args)
        cfg = _resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        return cmd_count_params(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())
