"""Command-line entry point."""

from __future__ import annotations

import argparse
import sys

from .config import MODES, load_config, loads
from .errors import ConfigError
from .experiments import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, rerun_manifest, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taskalloc", description="Run task-allocation experiments.")
    p.add_argument("--config", help="config file, or the name of a shipped config such as fig1")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (default: config value or current directory)")
    p.add_argument("--mode", choices=MODES, help="override the config mode")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    p.add_argument("--rerun", metavar="MANIFEST", help="re-execute a run manifest and compare outputs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    err = sys.stderr
    if args.rerun:
        try:
            result = rerun_manifest(args.rerun, args.out or ".")
        except ConfigError as exc:
            print("config error:\n  " + "\n  ".join(exc.errors), file=err)
            return EXIT_CONFIG
        except Exception as exc:
            print(f"rerun failed: {type(exc).__name__}: {exc}", file=err)
            return EXIT_RUNTIME
        for name, same in result.items():
            if not args.quiet:
                print(f"{'identical' if same else 'DIFFERS'}  {name}")
        return EXIT_OK if all(result.values()) else EXIT_CHECK
    if not args.config and args.mode != "selftest":
        print("error: --config or --rerun is required", file=err)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config) if args.config else loads("[run]\nmode = selftest\nlabel = selftest\n")
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.mode is not None:
            overrides["mode"] = args.mode
        if overrides:
            cfg = cfg.with_overrides(**overrides)
        outcome = run_experiment(cfg, out_dir=args.out, quiet=args.quiet,
                                 plots=False if args.no_plots else None)
    except ConfigError as exc:
        print("config error:\n  " + "\n  ".join(exc.errors), file=err)
        return EXIT_CONFIG
    if outcome.message:
        print(outcome.message, file=err)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
