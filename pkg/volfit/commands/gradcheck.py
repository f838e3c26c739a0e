"""`volfit gradcheck`: finite-difference check of every parameter gradient."""
import argparse
import sys
from pathlib import Path

from volfit.models.enums import ParameterizationMode
from volfit.services.gradcheck import run_gradcheck


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("gradcheck", parents=parents, help="verify analytic gradients")
    parser.add_argument("--mode", choices=[m.value for m in ParameterizationMode], default="direct")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--eps", type=float, default=1e-6)
    parser.add_argument("--tol", type=float, default=1e-4)
    parser.add_argument("--out", type=Path, default=None, help="also write the report to this file")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    report = run_gradcheck(ParameterizationMode(args.mode), args.seed, args.eps, args.tol, args.threads)
    text = report.format()
    print(text)
    if args.out is not None:
        args.out.write_text(text + "\n")
    if not report.passed:
        print(f"error: gradient check failed (max relative error {report.max_rel_err:.3e})", file=sys.stderr)
        return 1
    return 0
