"""Command-line driver for the reduction pipeline.

Subcommands mirror the pipeline stages; `run` executes them all.  Every
stage reads and writes JSON artifacts in the output directory, so a stage
can be rerun and diffed in isolation.  Exit codes: 0 when every verdict is
PASS or SKIPPED, 2 when any verdict is FAIL, 1 on usage errors or missing
prerequisites.
"""

from __future__ import annotations

import argparse
import sys

from .balance import MinimalityError
from .gsvd import SlackViolationError
from .pipeline import (
    MissingArtifactError,
    PipelineConfig,
    run_pipeline,
    stage_balance,
    stage_certify,
    stage_decompose,
    stage_fit_koopman,
    stage_report,
    stage_simulate,
)

_STAGE_COMMANDS = {
    "fit-koopman": stage_fit_koopman,
    "decompose": stage_decompose,
    "balance": stage_balance,
    "certify": stage_certify,
    "simulate": stage_simulate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopgram",
        description=(
            "Factor, balance, truncate, and certify nonlinear control systems "
            "through a norm-preserving lifted realization."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ["run", *list(_STAGE_COMMANDS), "report"]:
        p = sub.add_parser(name, help=f"{name} stage" if name != "run" else "full pipeline")
        p.add_argument("--config", required=True, help="path to the pipeline config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument(
            "--orders",
            default=None,
            help="comma-separated reduction orders, e.g. 1,2,4",
        )
        p.add_argument("--slack", type=float, default=None, help="override the gain slack")
    return parser


def _config_from_args(args) -> PipelineConfig:
    overrides = {
        "seed": args.seed,
        "output_dir": args.out,
        "slack": args.slack,
    }
    if args.orders is not None:
        overrides["reduction_orders"] = [int(v) for v in args.orders.split(",") if v]
    return PipelineConfig.from_file(args.config, overrides)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: unreadable config: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "run":
            _, code = run_pipeline(config)
            return code
        if args.command == "report":
            _, code = stage_report(config)
            return code
        _STAGE_COMMANDS[args.command](config)
        return 0
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MinimalityError, SlackViolationError, ValueError, KeyError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
