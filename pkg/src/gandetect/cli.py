"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .classifier import TAP_NAMES
from .config import load_config, load_preset, preset_names, with_overrides
from .errors import (
    CapabilityError,
    CheckpointVersionError,
    GandetectError,
    MissingArtifactError,
    NumericError,
    ValidationError,
)
from .pipeline import STAGES, run_stage

OUTPUT_DIR_ENV = "GANDETECT_OUTPUT_DIR"
LOCK_TIMEOUT_ENV = "GANDETECT_LOCK_TIMEOUT"
DEFAULT_LOCK_TIMEOUT = 600.0  # seconds to wait for another stage to finish

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_NUMERIC = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gandetect",
        description="Train class-conditional GANs over a victim classifier's layers, "
                    "craft evasion attacks, and detect/correct them.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES + ("run-all",):
        p = sub.add_parser(name, help=f"run the {name} stage")
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--config", help="path to a YAML experiment config")
        group.add_argument("--preset", choices=preset_names(),
                           help="use a shipped configuration preset")
        p.add_argument("--output-dir", help="override the config's output directory "
                                            f"(also via ${OUTPUT_DIR_ENV})")
        p.add_argument("--seed", type=int, help="override the config's seed everywhere")
        if name == "train-acgan":
            p.add_argument("--layer", help="train only this classifier tap "
                                           f"(index or name from {TAP_NAMES})")
            p.add_argument("--unconditional", action="store_true",
                           help="train the unconditional ablation instead")
    return parser


def _resolve_layer(value):
    if value is None:
        return None
    if value in TAP_NAMES:
        return TAP_NAMES.index(value)
    try:
        return int(value)
    except ValueError:
        raise ValidationError(f"--layer must be an index or one of {TAP_NAMES}, got {value!r}")


def _load(args) -> tuple:
    cfg = load_preset(args.preset) if args.preset else load_config(args.config)
    output_dir = args.output_dir or os.environ.get(OUTPUT_DIR_ENV)
    cfg = with_overrides(cfg, seed=args.seed, output_dir=output_dir)
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        root = Path(cfg.output_dir)
        root.mkdir(parents=True, exist_ok=True)

        from filelock import FileLock, Timeout

        timeout = float(os.environ.get(LOCK_TIMEOUT_ENV, DEFAULT_LOCK_TIMEOUT))
        try:
            with FileLock(root / "gandetect.lock", timeout=timeout):
                if args.stage == "run-all":
                    for name in STAGES:
                        run_stage(name, cfg)
                else:
                    run_stage(
                        args.stage,
                        cfg,
                        layer=_resolve_layer(getattr(args, "layer", None)),
                        unconditional=getattr(args, "unconditional", False),
                    )
        except Timeout:
            print(f"error: another stage holds the lock on {root}; "
                  f"waited {timeout:g}s", file=sys.stderr)
            return EXIT_VALIDATION
        return EXIT_OK
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, CapabilityError, CheckpointVersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GandetectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
