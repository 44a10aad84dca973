"""pve-lab command line: one subcommand per experiment."""

from __future__ import annotations

import argparse
import logging
import sys

from src import process_capacity, process_model_space, process_trajectories, process_verification
from src.config import load_experiment_config
from src.exceptions import PveLabError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _common_overrides(args: argparse.Namespace) -> dict:
    return {"seed": args.seed, "output_dir": args.out, "workers": args.workers}


def cmd_model_space(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, "model_space", _common_overrides(args))
    return process_model_space.main(config, args.force)


def cmd_capacity_sweep(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, "capacity_sweep", _common_overrides(args))
    return process_capacity.main(config, args.force)


def cmd_verify(args: argparse.Namespace) -> int:
    overrides = _common_overrides(args) | {"suite": args.suite, "count": args.count}
    config = load_experiment_config(args.config, "verify", overrides)
    return process_verification.main(config, args.force)


def cmd_trajectories(args: argparse.Namespace) -> int:
    overrides = _common_overrides(args) | {"model_file": args.model_file}
    config = load_experiment_config(args.config, "trajectories", overrides)
    return process_trajectories.main(config, args.force)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="INI file with one section per experiment")
    common.add_argument("--seed", type=int, default=None, help="root seed")
    common.add_argument("--out", default=None, help="output directory (default: hashed run dir)")
    common.add_argument("--force", action="store_true", help="overwrite a mismatched run dir")
    common.add_argument("--workers", type=int, default=None, help="worker processes")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="warnings only")

    parser = argparse.ArgumentParser(
        prog="pve-lab",
        description="Value-equivalent model learning experiments on tabular MDPs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model-space", parents=[common], help="model-space geometry per k")
    p.set_defaults(func=cmd_model_space)

    p = sub.add_parser("capacity-sweep", parents=[common], help="rank-limited PVE models")
    p.set_defaults(func=cmd_capacity_sweep)

    p = sub.add_parser("verify", parents=[common], help="proposition and bound checks")
    p.add_argument("--suite", choices=["props", "bounds", "all"], default=None)
    p.add_argument("--count", type=int, default=None, help="random cases per bound")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("trajectories", parents=[common], help="environment vs model rollouts")
    p.add_argument("--model-file", default=None, help="trained model file (default: environment)")
    p.set_defaults(func=cmd_trajectories)

    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return args.func(args)
    except PveLabError as e:
        print(f"\nError: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
