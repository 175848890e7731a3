"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime failure (partial
results and the manifest are still written).
"""
import argparse
import dataclasses
import os
import sys

from .expcli.config import ConfigError, parse_config
from .expcli.runner import COMMANDS

KIND_FOR_COMMAND = {
    "rates": ("rates-operator", "rates-frobenius"),
    "testfns": ("testfns",),
    "conclab": ("conclab",),
    "geweke": ("geweke",),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="sparsefactor", description="Sparse factor-model experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "validate-config"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        if name == "validate-config":
            continue
        p.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        p.add_argument("--out", help="output directory (overrides config out_dir)")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
        p.add_argument("--cell", help="glob over task ids, e.g. 'rates/regime=ps/*'")
    return parser


def load(args):
    cfg = parse_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed: must be an unsigned 64-bit integer")
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    cfg = dataclasses.replace(cfg, **overrides)
    if args.command in KIND_FOR_COMMAND and cfg.kind not in KIND_FOR_COMMAND[args.command]:
        raise ConfigError(f"kind: {cfg.kind!r} cannot be run by '{args.command}' (expected {KIND_FOR_COMMAND[args.command]})")
    if getattr(args, "workers", 1) < 1:
        raise ConfigError("--workers: must be >= 1")
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.command == "validate-config":
        print(f"{args.config}: ok (kind={cfg.kind})")
        return 0
    try:
        result = COMMANDS[args.command](cfg, cfg.out_dir, args.workers, args.cell)
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for name in result.outputs:
        print(os.path.join(result.out_dir, name))
    if not result.ok:
        print(f"{len(result.failed)} task(s) failed; see {os.path.join(result.out_dir, 'manifest.json')}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
