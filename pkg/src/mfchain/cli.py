"""Command-line entry point.

    mfchain <command> [--config FILE] [--seed S] [--out DIR] [--threads K]
                      [--force] [--section.key=value ...]

Commands: solve, simulate, weak-error, stationary-gap, certify,
master-check, decay-fit.  Any flat config key can be overridden on the
command line with a dotted flag, e.g. `--run.R=40000` or `--model.name
weak_interaction`; dotted flags take precedence over the config file.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

from .harness import COMMANDS, HarnessError, cfg_int, load_config


def parse_dotted(tokens: list) -> dict:
    """Turn leftover --section.key[=value] tokens into config overrides."""
    out: dict = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or "." not in tok.split("=", 1)[0]:
            raise HarnessError(f"unrecognized argument: {tok}")
        body = tok[2:]
        if "=" in body:
            key, val = body.split("=", 1)
            i += 1
        else:
            key = body
            if i + 1 >= len(tokens) or tokens[i + 1].startswith("--"):
                raise HarnessError(f"missing value for override {tok}")
            val = tokens[i + 1]
            i += 2
        out[key] = val
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfchain",
        description="Mean-field jump systems: flows, particles, certificates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value file")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (overrides run.seed)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--force", action="store_true",
                       help="proceed past failed preconditions (recorded)")
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        overrides = parse_dotted(extra)
        cfg = load_config(args.config)
        cfg.update(overrides)
        seed = args.seed if args.seed is not None else cfg_int(cfg, "run.seed", 0)
        out = args.out if args.out else os.path.join("mfchain_out", args.command)
        runner = COMMANDS[args.command]
        return int(runner(cfg, out, seed, threads=args.threads,
                          force=args.force))
    except HarnessError as exc:
        print(f"mfchain: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:           # argparse's own exits (help, usage)
        code = exc.code
        return int(code) if isinstance(code, int) else 1
    except Exception as exc:
        print(f"mfchain: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
