"""`volfit eval`: metrics table of a checkpoint against dataset images."""
import argparse
from pathlib import Path

from volfit.commands.common import frame_list
from volfit.services.checkpoint import checkpoint_load
from volfit.services.train import evaluate
from volfit.utils.dataset import load_dataset


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("eval", parents=parents, help="evaluate a checkpoint")
    parser.add_argument("--ckpt", type=Path, required=True)
    parser.add_argument("--data", type=Path, required=True)
    parser.add_argument("--holdout", action="store_true", help="held-out cameras only (default: every camera)")
    parser.add_argument("--frames", type=frame_list, default=None)
    parser.add_argument("--steps", type=int, default=None, help="step count (default: the run config's)")
    parser.add_argument("--out", type=Path, default=None, help="also write the table to this file")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    checkpoint = checkpoint_load(args.ckpt)
    dataset = load_dataset(args.data)
    frames = args.frames if args.frames is not None else checkpoint.config.train.frames
    cameras = dataset.holdout_cameras if args.holdout else dataset.cameras
    steps = args.steps or checkpoint.config.render.step_count
    report = evaluate(checkpoint.model, dataset, cameras, frames, steps, args.threads)
    table = report.format_table()
    print(table)
    if args.out is not None:
        args.out.write_text(table + "\n")
    return 0
