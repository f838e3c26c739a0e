"""Command-line entry point: synth, fit, render, eval and gradcheck."""
import argparse
import logging
import sys
from typing import List, Optional

from volfit.commands import evaluate, fit, gradcheck, render, synth
from volfit.commands.common import common_parser
from volfit.core.config import settings
from volfit.core.errors import VolfitError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=settings.APP_NAME, description="Differentiable volumetric scene fitting")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    parents = [common_parser()]
    for command in (synth, fit, render, evaluate, gradcheck):
        command.register(subparsers, parents)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=(args.log_level or settings.LOG_LEVEL).upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.handler(args)
    except VolfitError as e:
        print(f"error: {e.detail}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
