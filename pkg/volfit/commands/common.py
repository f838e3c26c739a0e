"""Flags and output helpers shared by the subcommands."""
import argparse
from pathlib import Path

import numpy as np

from volfit.services.render import RenderOutput
from volfit.utils.imageio import normalize_depth, write_f32img, write_png


def common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--threads", type=int, default=None,
                        help="worker count, 0 = one per CPU (default: VOLFIT_THREADS)")
    parser.add_argument("--log-level", type=str.upper, default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="logging level (default: VOLFIT_LOG_LEVEL)")
    return parser


def frame_list(value: str) -> list:
    """Parse '0,2,5' or '0-3' into a list of frame indices"""
    frames = []
    try:
        for part in value.split(","):
            if "-" in part:
                low, high = part.split("-", 1)
                frames.extend(range(int(low), int(high) + 1))
            elif part:
                frames.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid frame list '{value}'")
    if not frames:
        raise argparse.ArgumentTypeError("frame list is empty")
    return frames


def write_render(out_dir: Path, stem: str, output: RenderOutput) -> None:
    """rgb, alpha and depth as .f32img plus PNG previews"""
    write_f32img(out_dir / f"{stem}_rgb.f32img", output.composite)
    write_f32img(out_dir / f"{stem}_alpha.f32img", output.alpha)
    write_f32img(out_dir / f"{stem}_depth.f32img", output.depth)
    write_png(out_dir / f"{stem}_rgb.png", output.composite)
    write_png(out_dir / f"{stem}_alpha.png", output.alpha)
    write_png(out_dir / f"{stem}_depth.png", normalize_depth(np.asarray(output.depth)))
