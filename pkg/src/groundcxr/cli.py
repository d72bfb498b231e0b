"""Command-line entry point.

Subcommands: gen-synthetic, pretrain, finetune, eval, ablate.  Every run is
configured by a flat dotted key-value file plus --seed/--out overrides.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import RunConfig, load_run_config
from .harness import (
    TASKS,
    load_records,
    run_ablation,
    run_eval,
    run_finetune,
    run_pretrain,
)
from .records import save_manifest
from .synth import generate_dataset

FRACTION_PERCENT = {1: 0.01, 10: 0.10, 100: 1.0}


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, default=None, help="key-value config file")
    sub.add_argument("--seed", type=int, default=None, help="override config seed")
    sub.add_argument("--out", type=Path, default=None, help="output directory")


def _load(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
        config = dataclasses.replace(
            config, synth=dataclasses.replace(config.synth, seed=args.seed)
        )
    if args.out is not None:
        config = dataclasses.replace(config, output_dir=str(args.out))
    return config


def _out_dir(config: RunConfig) -> Path:
    return Path(config.output_dir)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="groundcxr")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synthetic", help="write a synthetic grounded dataset")
    _add_common(gen)

    pre = sub.add_parser("pretrain", help="pre-train on the manifest's pretrain split")
    _add_common(pre)

    fin = sub.add_parser("finetune", help="fine-tune one downstream task")
    _add_common(fin)
    fin.add_argument("--task", choices=TASKS, required=True)
    fin.add_argument("--fraction", type=int, choices=sorted(FRACTION_PERCENT), default=100)
    fin.add_argument("--checkpoint", type=Path, default=None)

    eva = sub.add_parser("eval", help="evaluate pre-training objectives on the val split")
    _add_common(eva)
    eva.add_argument("--checkpoint", type=Path, default=None)

    abl = sub.add_parser("ablate", help="run the six-row grounding/entity-loss grid")
    _add_common(abl)

    args = parser.parse_args(argv)
    config = _load(args)
    out_dir = _out_dir(config)

    if args.command == "gen-synthetic":
        records = generate_dataset(config.synth)
        save_manifest(records, out_dir)
        print(f"wrote {len(records)} samples to {out_dir}")
        return 0

    if args.command == "pretrain":
        result = run_pretrain(config, out_dir=out_dir)
        final = result["log"].steps[-1]
        print(f"pretrained {len(result['log'].steps)} steps; final total {final['total']:.4f}")
        print(f"checkpoint: {result['checkpoint']}")
        return 0

    checkpoint = getattr(args, "checkpoint", None)
    if checkpoint is None and args.command in ("finetune", "eval"):
        checkpoint = out_dir / "checkpoint.npz"

    if args.command == "finetune":
        result = run_finetune(
            config,
            args.task,
            checkpoint=checkpoint,
            fraction=FRACTION_PERCENT[args.fraction],
            out_dir=out_dir,
        )
        for key, value in result["metrics"].items():
            print(f"{key} = {value}")
        return 0

    if args.command == "eval":
        metrics = run_eval(config, checkpoint=checkpoint, out_dir=out_dir)
        for key, value in metrics.items():
            print(f"{key} = {value}")
        return 0

    if args.command == "ablate":
        rows = run_ablation(config, out_dir=out_dir)
        for row in rows:
            print(row)
        print(f"wrote {out_dir / 'ablation.csv'}")
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
