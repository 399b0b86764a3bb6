"""Command-line entry point.

    bimax <run|sweep|stability|gap|bounds> --config <path>
          [--out <dir>] [--preset <name>] [--workers N] [--seed S]

Exit codes: 0 success, 2 config error, 3 divergence in a ``run``.  Sweep-style
commands always exit 0 and mark failed cells in their rows.  The worker count
can also be set through the BIMAX_WORKERS environment variable (the --workers
flag wins).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .experiments import (
    ConfigError,
    MODES,
    cmd_bounds,
    cmd_run,
    cmd_stability,
    cmd_sweep,
    load_config,
    resolve_config,
)

__all__ = ["main"]


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bimax",
        description="Bilevel minimax experiment runner (solvers, stability, "
                    "generalization gaps, theoretical bounds).")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"{mode} experiment")
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--preset", default=None,
                       help="named preset applied beneath the config "
                            "(paper-default, desk)")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes for sweep cells")
        p.add_argument("--seed", type=int, default=None, help="root seed override")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("BIMAX_WORKERS", "1"))

    try:
        config = resolve_config(load_config(args.config), preset=args.preset,
                                seed_override=args.seed, out_override=args.out)
        mode = config["experiment"]["mode"]
        gap_like = {"sweep", "gap"}
        if mode != args.mode and not (mode in gap_like and args.mode in gap_like):
            raise ConfigError(f"config 'experiment.mode' is {mode!r} but the "
                              f"{args.mode!r} subcommand was invoked")
    except (ConfigError, OSError) as exc:
        print(f"bimax: config error: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out) if args.out else None
    try:
        if args.mode == "run":
            code, artifact = cmd_run(config, out_dir=out)
            if code != 0:
                print(f"bimax: {artifact['failure']['error']}", file=sys.stderr)
            return code
        if args.mode in ("sweep", "gap"):
            code, _ = cmd_sweep(config, out_dir=out, workers=workers)
            return code
        if args.mode == "stability":
            code, _ = cmd_stability(config, out_dir=out, workers=workers)
            return code
        code, _ = cmd_bounds(config, out_dir=out)
        return code
    except ConfigError as exc:
        print(f"bimax: config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
