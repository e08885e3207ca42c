"""Command-line entry point.

Usage: twinsense generate|sweep|refine|pattern|baseline --config <path>
       [--seed N] [--out DIR]

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .harness import (ConfigError, DataError, cmd_baseline, cmd_generate,
                      cmd_pattern, cmd_refine, cmd_sweep, load_config)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twinsense",
                                description="Digital-twin channel sensing experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment config JSON")
        sp.add_argument("--seed", type=int, default=None,
                        help="override all nested seeds")
        sp.add_argument("--out", default=None, help="override the output directory")

    for name in ("generate", "sweep", "refine", "baseline"):
        common(sub.add_parser(name))
    pat = sub.add_parser("pattern")
    pat.add_argument("--checkpoint", required=True, help="model checkpoint JSON")
    pat.add_argument("--angles", type=int, default=181,
                     help="number of angle samples over [0, 180] degrees")
    pat.add_argument("--out", default="pattern.csv", help="output CSV path")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "pattern":
            path = cmd_pattern(args.checkpoint, args.angles, args.out)
            print(f"wrote {path}")
            return 0
        cfg = load_config(args.config, seed_override=args.seed,
                          out_override=args.out)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "sweep":
            print(f"wrote {cmd_sweep(cfg)}")
        elif args.command == "refine":
            print(f"wrote {cmd_refine(cfg)}")
        elif args.command == "baseline":
            print(f"wrote {cmd_baseline(cfg)}")
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
