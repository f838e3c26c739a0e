"""`volfit synth`: render an analytic scene into a dataset directory."""
import argparse
import logging
from pathlib import Path

from volfit.models.enums import SceneKind
from volfit.services.synthdata import ORACLE_STEPS, default_scene, make_rig, synthesize

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("synth", parents=parents, help="synthesize a multi-view dataset")
    parser.add_argument("--scene", required=True, choices=[kind.value for kind in SceneKind])
    parser.add_argument("--cameras", type=int, default=8)
    parser.add_argument("--frames", type=int, default=1)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--width", type=int, default=64)
    parser.add_argument("--height", type=int, default=64)
    parser.add_argument("--holdout", type=int, default=2, help="number of held-out cameras")
    parser.add_argument("--radius", type=float, default=2.5, help="camera distance from the box center")
    parser.add_argument("--steps", type=int, default=ORACLE_STEPS, help="oracle step count")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--color-jitter", action="store_true", help="perturb per-camera gain and bias by up to 5%%")
    parser.add_argument("--mesh", action="store_true", help="also write a ground-plane OBJ for hybrid rendering")
    parser.add_argument("--conditioning", action="store_true", help="attach a per-frame conditioning scalar")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    scene = default_scene(SceneKind(args.scene), frames=args.frames, seed=args.seed)
    cameras = make_rig(args.cameras, radius=args.radius, seed=args.seed, width=args.width, height=args.height,
                       holdout=args.holdout)
    rig_file = synthesize(scene, cameras, args.out, step_count=args.steps, color_jitter=args.color_jitter,
                          with_mesh=args.mesh, conditioning=args.conditioning, seed=args.seed,
                          threads=args.threads)
    print(rig_file)
    return 0
