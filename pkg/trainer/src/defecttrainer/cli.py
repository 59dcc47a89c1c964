"""defect-trainer: train a reference classifier on a mixed supervised stream
container, and score folder splits into the predictions CSV the pipeline
toolkit evaluates. Communication with the toolkit is files + its CLI only."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .data import FolderDataset
from .train import TrainConfig, TrainingDiverged, load_checkpoint, score_dataset, train, write_scores_csv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="defect-trainer", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="train on a supervised stream container")
    p.add_argument("--container", type=Path, required=True, help="stream container (.h5)")
    p.add_argument("--val-data", type=Path, required=True, help="validation folder split root")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--no-pretrained", action="store_true",
                   help="start from random init instead of the pretrained backbone")
    p.add_argument("--no-amp", action="store_true", help="disable mixed precision")
    p.add_argument("--num-workers", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None,
                   help="cap optimizer steps per epoch (debug/determinism runs)")
    p.add_argument("--no-epoch-eval", action="store_true",
                   help="skip the per-epoch metrics pass through the toolkit's evaluate")
    p.add_argument("--target-mcc", type=float, default=None,
                   help="stop once the toolkit's evaluate reports this image-level mcc "
                        "on the validation split")

    p = subs.add_parser("score", help="score a folder split into a predictions CSV")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="folder split root")
    p.add_argument("--out", type=Path, required=True, help="output CSV path")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--no-amp", action="store_true")
    p.add_argument("--modality", default=None,
                   help="preprocessing modality override (default: checkpoint value)")
    return parser


def _cmd_train(args) -> int:
    config = TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        early_stop_patience=args.patience,
        seed=args.seed,
        pretrained=not args.no_pretrained,
        amp=not args.no_amp,
        num_workers=args.num_workers,
        max_steps_per_epoch=args.max_steps,
        eval_each_epoch=not args.no_epoch_eval,
        target_mcc=args.target_mcc,
    )
    result = train(args.container, args.val_data, args.out, config)
    print(f"best checkpoint: {result.best_checkpoint} (epoch {result.best_epoch}); "
          f"{result.stopped_reason}")
    return 0


def _cmd_score(args) -> int:
    model, _config, payload = load_checkpoint(args.checkpoint)
    modality = args.modality or payload.get("modality", "asm")
    dataset = FolderDataset(args.data, modality=modality)
    rows = score_dataset(model, dataset, args.batch_size, "cpu", amp=not args.no_amp)
    write_scores_csv(rows, args.out)
    print(f"wrote {len(rows)} scores to {args.out}")
    return 0


def run(argv: list[str]) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        return _cmd_score(args)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    entry()
