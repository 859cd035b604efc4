"""Command-line launcher for the scoring service."""

from __future__ import annotations

import argparse
import sys

import uvicorn
from voxcurate.adapters import ENDPOINTS

from .service import ServiceConfig, create_app


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scorerd",
        description="Serve the line-delimited scoring protocol over HTTP.",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8040)
    parser.add_argument(
        "--disable", action="append", default=[], metavar="ENDPOINT",
        choices=list(ENDPOINTS),
        help="disable one endpoint (repeatable)",
    )
    parser.add_argument("--transcribe-mode", default="empty",
                        choices=("empty", "echo", "fixed"))
    parser.add_argument("--transcribe-text", default="")
    parser.add_argument("--dnsmos-mode", default="fixed",
                        choices=("fixed", "hash"))
    parser.add_argument("--dnsmos-value", type=float, default=3.0)
    parser.add_argument("--vad-mode", default="full",
                        choices=("full", "hash"))
    parser.add_argument("--embed-dim", type=int, default=16)
    parser.add_argument("--model-name", default="stub")
    parser.add_argument("--model-version", default="0")
    return parser


def config_from_args(args: argparse.Namespace) -> ServiceConfig:
    enabled = tuple(
        name for name in ENDPOINTS if name not in set(args.disable)
    )
    return ServiceConfig(
        enabled=enabled,
        transcribe_mode=args.transcribe_mode,
        transcribe_text=args.transcribe_text,
        dnsmos_mode=args.dnsmos_mode,
        dnsmos_value=args.dnsmos_value,
        vad_mode=args.vad_mode,
        embed_dim=args.embed_dim,
        model_name=args.model_name,
        model_version=args.model_version,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except ValueError as exc:
        print(f"scorerd: {exc}", file=sys.stderr)
        return 2
    uvicorn.run(create_app(config), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
