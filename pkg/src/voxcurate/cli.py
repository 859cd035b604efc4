"""Command-line surface for the curation pipeline.

Every subcommand validates the full config before touching any file,
so a typo fails fast instead of half-running a stage.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Sequence

from .config import ConfigError, PipelineConfig, load_config
from .pipeline import STAGES, run_stage
from .sharding import StageRunError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxcurate",
        description=(
            "Speech corpus curation: standardize, segment, score, "
            "filter, and evaluate."
        ),
    )
    subparsers = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        sub = subparsers.add_parser(stage, help=f"run the {stage} stage")
        sub.add_argument(
            "--config", required=True, help="path to the YAML config file"
        )
        sub.add_argument(
            "--shards", type=int, default=None,
            help="override shard_count",
        )
        sub.add_argument(
            "--workers", type=int, default=None,
            help="override worker_count",
        )
        sub.add_argument(
            "--seed", type=int, default=None, help="override seed"
        )
        sub.add_argument(
            "--stub-adapters", action="store_true",
            help="force in-process stub adapters",
        )
        sub.add_argument(
            "--adapter-url", default=None,
            help="scoring service base URL (forces http adapter mode)",
        )
    return parser


def _apply_overrides(config: PipelineConfig,
                     args: argparse.Namespace) -> PipelineConfig:
    if args.shards is not None:
        config = dataclasses.replace(config, shard_count=args.shards)
    if args.workers is not None:
        config = dataclasses.replace(config, worker_count=args.workers)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.stub_adapters and args.adapter_url:
        raise ConfigError(
            "--stub-adapters and --adapter-url are mutually exclusive"
        )
    if args.stub_adapters:
        adapter = dataclasses.replace(config.adapter, mode="stub")
        config = dataclasses.replace(config, adapter=adapter)
    if args.adapter_url:
        adapter = dataclasses.replace(
            config.adapter, mode="http", base_url=args.adapter_url
        )
        config = dataclasses.replace(config, adapter=adapter)
    return config


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        config = _apply_overrides(config, args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        run_stage(args.stage, config)
    except StageRunError as exc:
        print(str(exc), file=sys.stderr)
        for outcome in exc.failed:
            print(
                f"  shard {outcome.shard_id} failed after "
                f"{outcome.attempts} attempt(s): {outcome.error}",
                file=sys.stderr,
            )
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
