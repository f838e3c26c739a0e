"""`volfit fit`: optimize a scene model against a dataset."""
import argparse
import logging
from pathlib import Path

from volfit.commands.common import frame_list
from volfit.models.enums import Precision
from volfit.schemas.config import TrainConfig, dump_run_config, load_run_config
from volfit.services.train import fit
from volfit.utils.dataset import load_dataset

logger = logging.getLogger(__name__)

CONFIG_ECHO = "config.json"


def learning_rate_help() -> str:
    fields = TrainConfig.model_fields
    rates = [name for name in fields if name.endswith("learning_rate")]
    return "learning rates: " + "; ".join(
        f"train.{name}={fields[name].default:g} (" + fields[name].description + ")" for name in rates
    )


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("fit", parents=parents, help="fit a scene model to a dataset")
    parser.add_argument("--data", type=Path, required=True, help="dataset directory or rig file")
    parser.add_argument("--out", type=Path, default=Path("run"))
    parser.add_argument("--config", type=Path, default=None, help="JSON run config")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one run config value; " + learning_rate_help())
    parser.add_argument("--iters", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--precision", choices=[p.value for p in Precision], default=None)
    parser.add_argument("--frames", type=frame_list, default=None, help="train on these frames only, e.g. 0,2-4")
    parser.add_argument("--no-progress", action="store_true")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    overrides = list(args.overrides)
    if args.iters is not None:
        overrides.append(f"train.iterations={args.iters}")
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    if args.precision is not None:
        overrides.append(f"train.precision={args.precision}")
    if args.frames is not None:
        overrides.append(f"train.frames={args.frames}")
    config = load_run_config(args.config, overrides)

    dataset = load_dataset(args.data)
    args.out.mkdir(parents=True, exist_ok=True)
    dump_run_config(config, args.out / CONFIG_ECHO)
    result = fit(dataset, config, args.out, threads=args.threads, progress=not args.no_progress)
    if result.log:
        print(f"final loss {result.log[-1].total:.9e}")
    if result.metrics is not None:
        print(f"held-out psnr {result.metrics.mean_psnr:.4f} dB mse_x1e4 {result.metrics.mean_mse_x1e4:.6f}")
    return 0
