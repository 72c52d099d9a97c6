"""Command-line entry point: ``gmep sweep`` and ``gmep plot``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from ..errors import ConfigurationError, GmepError
from .config import load_config, parse_detector
from .io import emit_csv, gnuplot_script
from .sweep import run_sweep

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmep", description="MIMO detection SER sweeps.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="run a Monte Carlo SER sweep")
    s.add_argument("--config", required=True, help="YAML or JSON sweep description")
    s.add_argument("--out", help="CSV output path (overrides the config's 'output')")
    s.add_argument("--seed", type=int, help="base seed (overrides the config)")
    s.add_argument(
        "--detector",
        action="append",
        metavar="SPEC",
        help="detector as kind[:key=value,...], e.g. gmep:L=2,beta=0.8; repeatable; "
        "replaces the config's detector list",
    )
    s.add_argument("--trials", type=int, help="trials per SNR point (overrides the config)")
    s.add_argument("--workers", type=int, help="worker processes")
    s.add_argument("--timing", action="store_true", help="record wall-clock times in the CSV")
    s.add_argument("-v", "--verbose", action="store_true")

    g = sub.add_parser("plot", help="print a gnuplot script for a results CSV")
    g.add_argument("csv")
    g.add_argument("--title", default="SER vs SNR")
    g.add_argument("--png", help="write the plot to this PNG file")
    return p


def _sweep(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["output"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.detector:
        overrides["detectors"] = tuple(parse_detector(d) for d in args.detector)
    if args.trials is not None:
        overrides.update(trials=args.trials, symbols_per_point=None)
    if args.timing:
        overrides["timing"] = True
    cfg = replace(cfg, **overrides)
    if not cfg.output:
        raise ConfigurationError("no output path: pass --out or set 'output' in the config")

    def progress(done, total):
        if args.verbose:
            print(f"\r{done}/{total} chunks", end="", file=sys.stderr, flush=True)

    result = run_sweep(cfg, progress=progress)
    if args.verbose:
        print(file=sys.stderr)
    emit_csv(result, cfg.output)
    if result.failed_trials:
        print(f"warning: {result.failed_trials} trials failed and were excluded", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    try:
        if args.command == "sweep":
            return _sweep(args)
        sys.stdout.write(gnuplot_script(args.csv, args.title, args.png))
        return 0
    except ConfigurationError as exc:
        print(f"gmep: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GmepError, OSError, ValueError) as exc:
        print(f"gmep: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
