"""Command line interface: ``invlab gen-data | train | sweep | probe``.

Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
failures while running a command.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

import voluptuous as vol
import yaml

from .config.experiment import ExperimentConfig
from .evaluation.probe import ProbeKind, ProbeTarget
from .experiment.manager import ExperimentManager
from .experiment.sweep import SweepSpec, run_sweep

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

LOG_FORMAT = "%(asctime)s [%(levelname)8s] %(message)s (%(filename)s:%(lineno)s)"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
DEFAULT_CONFIG = Path("config.yaml")
DEFAULT_DATA_DIR = Path("data")


class UsageError(Exception):
    """Invalid command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=DEFAULT_CONFIG, help="YAML configuration file")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="seed overriding the configuration")
    parser.add_argument("--force", action="store_true", help="overwrite existing outputs")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a configuration key by dotted path, e.g. method.lambda=0.5",
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging verbosity",
    )


def build_parser() -> argparse.ArgumentParser:
    """Argument parser of all subcommands."""
    parser = _Parser(prog="invlab", description="Context-invariant debiasing experiments.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = commands.add_parser("gen-data", help="generate and write a synthetic dataset")
    _common(gen)

    train = commands.add_parser("train", help="train the configured method")
    _common(train)

    sweep = commands.add_parser("sweep", help="run a method x bias ratio x seed sweep")
    _common(sweep)

    probe = commands.add_parser("probe", help="probe a frozen feature extractor")
    _common(probe)
    probe.add_argument(
        "--checkpoint",
        type=Path,
        required=True,
        help="extractor checkpoint file or run directory",
    )
    probe.add_argument(
        "--target",
        dest="targets",
        action="append",
        choices=[str(t) for t in ProbeTarget],
        help="label to probe for (repeatable, default: all)",
    )
    probe.add_argument("--kind", choices=[str(k) for k in ProbeKind], default=None)
    probe.add_argument("--embeddings", action="store_true", help="export test embeddings")
    return parser


def _seed_override(command: str, seed: int | None) -> list[str]:
    if seed is None:
        return []
    if command == "gen-data":
        return [f"data.seed={seed}"]
    if command == "sweep":
        return [f"sweep.seeds=[{seed}]"]
    return [f"method.seed={seed}"]


def _configure_logging(level: str) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=LOG_DATE_FORMAT, force=True)


def _run(args: argparse.Namespace, config: ExperimentConfig) -> None:
    manager = ExperimentManager(config)
    if args.command == "gen-data":
        out = args.out or config.data_path or DEFAULT_DATA_DIR
        manager.gen_data(out, force=args.force)
    elif args.command == "train":
        out = args.out or config.output / str(config.method.method) / f"seed={config.method.seed}"
        record = manager.train(out, force=args.force)
        _LOGGER.info("Unbiased test accuracy %.4f at epoch %d", record.test_accuracy, record.selected_epoch)
    elif args.command == "sweep":
        summary = run_sweep(SweepSpec.from_config(config), args.out or config.output, force=args.force)
        _LOGGER.info("Sweep summary:\n%s", summary.to_string(index=False))
    else:
        out = args.out or config.output / "probes"
        targets = args.targets or [str(t) for t in ProbeTarget]
        reports = manager.probe(
            args.checkpoint, out, targets=targets, kind=args.kind, embeddings=args.embeddings
        )
        if not all(report.passed for report in reports):
            _LOGGER.warning("At least one probe did not pass its threshold")


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line interface and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"invlab: error: {exc}\n")
        return EXIT_USAGE
    _configure_logging(args.log_level)

    overrides = (*_seed_override(args.command, args.seed), *args.overrides)
    try:
        config = ExperimentConfig.load(args.config, overrides)
    except (FileNotFoundError, TypeError, ValueError, vol.Invalid, yaml.YAMLError) as exc:
        _LOGGER.error("Invalid configuration: %s", exc)  # noqa: TRY400
        return EXIT_USAGE

    try:
        _run(args, config)
    except FileExistsError as exc:
        _LOGGER.error("%s", exc)  # noqa: TRY400
        return EXIT_USAGE
    except Exception:
        _LOGGER.exception("%s failed", args.command)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
