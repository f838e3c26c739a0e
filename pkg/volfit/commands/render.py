"""`volfit render`: images, exit opacity and depth from a checkpoint."""
import argparse
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

from volfit.commands.common import write_render
from volfit.core.errors import ConfigError
from volfit.models.camera import Camera
from volfit.models.enums import BackgroundMode, ParameterizationMode
from volfit.models.scene import latent_interpolate, template_slice
from volfit.services.checkpoint import Checkpoint, checkpoint_load
from volfit.services.render import render_image
from volfit.services.train import frame_latent
from volfit.utils.dataset import Dataset, load_dataset
from volfit.utils.imageio import write_f32img, write_png
from volfit.utils.objfile import read_obj

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("render", parents=parents, help="render views of a fitted model")
    parser.add_argument("--ckpt", type=Path, required=True)
    parser.add_argument("--camera", action="append", default=[], help="camera name (repeatable; default: all)")
    parser.add_argument("--frame", type=int, default=0)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--data", type=Path, default=None,
                        help="dataset for known backgrounds, encoder views and conditioning")
    parser.add_argument("--mesh", type=Path, default=None, help="OBJ mesh composited with the volume")
    parser.add_argument("--unwarped", action="store_true", help="render the template with the warp disabled")
    parser.add_argument("--slice", type=float, default=None, metavar="Z",
                        help="also write the template opacity slice at normalized height Z")
    parser.add_argument("--interp", type=int, nargs=2, default=None, metavar=("FRAME_A", "FRAME_B"),
                        help="render codes interpolated between two frames")
    parser.add_argument("--steps", type=int, default=5, help="number of interpolation images")
    parser.add_argument("--march-steps", type=int, default=None, help="step count (default: the run config's)")
    parser.set_defaults(handler=run)


def _cameras(checkpoint: Checkpoint, dataset: Optional[Dataset], names: List[str]) -> List[Camera]:
    source = dataset.cameras if dataset is not None else checkpoint.cameras
    if not source:
        raise ConfigError("Checkpoint holds no camera geometry; pass --data")
    if not names:
        return list(source)
    lookup = dataset.camera if dataset is not None else checkpoint.camera
    return [lookup(name) for name in names]


def _warn_missing_backgrounds(checkpoint: Checkpoint, cameras: List[Camera]) -> None:
    if BackgroundMode(checkpoint.model.background_mode) != BackgroundMode.KNOWN:
        return
    missing = [camera.id for camera in cameras if camera.background is None]
    if missing:
        logger.warning("Model was fitted with known backgrounds but none are loaded for %s; "
                       "compositing over black (pass --data)", ", ".join(missing))


def run(args: argparse.Namespace) -> int:
    checkpoint = checkpoint_load(args.ckpt)
    model = checkpoint.model
    dataset = load_dataset(args.data) if args.data is not None else None
    cameras = _cameras(checkpoint, dataset, args.camera)
    _warn_missing_backgrounds(checkpoint, cameras)
    mesh = read_obj(args.mesh) if args.mesh is not None else None
    step_count = args.march_steps or checkpoint.config.render.step_count
    args.out.mkdir(parents=True, exist_ok=True)

    if args.interp is not None:
        if model.mode != ParameterizationMode.LATENT:
            raise ConfigError("Latent interpolation needs a latent-mode model")
        if args.steps < 1:
            raise ConfigError("--steps must be positive")
        z_a, c_a = frame_latent(model, dataset, args.interp[0])
        z_b, c_b = frame_latent(model, dataset, args.interp[1])
        for k in range(args.steps):
            t = k / (args.steps - 1) if args.steps > 1 else 0.0
            z = latent_interpolate(z_a, z_b, t)
            c = latent_interpolate(c_a, c_b, t) if c_a is not None else None
            for camera in cameras:
                output = render_image(model, camera, mesh, step_count, z, c, args.threads, args.unwarped)
                write_render(args.out, f"{camera.id}_interp{k:03d}", output)
        logger.info("Rendered %d interpolation steps for %d cameras", args.steps, len(cameras))
        return 0

    z, c = frame_latent(model, dataset, args.frame)
    for camera in cameras:
        output = render_image(model, camera, mesh, step_count, z, c, args.threads, args.unwarped)
        write_render(args.out, f"{camera.id}_f{args.frame:03d}", output)
    if args.slice is not None:
        image = template_slice(model, args.slice, z=z, c=c)
        stem = f"slice_f{args.frame:03d}_z{args.slice:+.3f}"
        write_f32img(args.out / f"{stem}.f32img", image)
        peak = float(np.max(image))
        write_png(args.out / f"{stem}.png", image / peak if peak > 0 else image)
    logger.info("Rendered frame %d for %d cameras into %s", args.frame, len(cameras), args.out)
    return 0
