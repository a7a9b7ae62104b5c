"""Command line entry point: one subcommand per pipeline stage plus ``retrieve`` and ``all``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Sequence

from . import pipeline
from .config import CONFIG_ENV_VAR, PRESETS, load_config
from .errors import ConfigError, MtlError

log = logging.getLogger("mtlrec")

EXIT_OK = 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"YAML config file (default: ${CONFIG_ENV_VAR})")
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--seed", type=int)
    common.add_argument("--artifact-dir", help="overrides artifact_dir from the config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value, e.g. --set topics.num_clusters=32")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mtlrec", description="Topic-aware video recommendation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in pipeline.PIPELINE_ORDER:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")
    retrieve = sub.add_parser("retrieve", parents=[common], help="print candidate videos for one user")
    retrieve.add_argument("--user-id", type=int, required=True)
    retrieve.add_argument("--ranked", action="store_true", help="order candidates with the trained ranker")
    sub.add_parser("all", parents=[common], help="run every stage in order")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if args.artifact_dir is not None:
            overrides.append(f"artifact_dir={args.artifact_dir}")
        cfg = load_config(args.config, overrides, preset=args.preset, seed=args.seed)
        ws = pipeline.Workspace(cfg.artifact_dir, cfg)
        if args.command == "retrieve":
            try:
                out = pipeline.retrieve_for_user(ws, args.user_id, ranked=args.ranked)
            except KeyError as exc:
                raise ConfigError(exc.args[0]) from None
            print(json.dumps({"user_id": args.user_id, "candidates": out}))
        elif args.command == "all":
            pipeline.run_all(ws)
            print(ws.path(pipeline.REPORT))
        else:
            summary = pipeline.run_stage(ws, args.command)
            print(json.dumps(summary, sort_keys=True, indent=2))
    except MtlError as exc:
        print(f"mtlrec: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return EXIT_OK


def main() -> None:
    sys.exit(run())
