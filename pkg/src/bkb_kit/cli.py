"""``bkb-kit`` command line: run, starvation, verify, bench."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import harness
from .config import ConfigError, load_config

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bkb-kit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, needs_config in (("run", True), ("starvation", False), ("verify", True), ("bench", True)):
        s = sub.add_parser(name)
        s.add_argument("--config", required=needs_config, help="flat TOML experiment file")
        s.add_argument("--output", help="output directory (overrides output_dir)")
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--seed-offset", type=int, default=0)
        if name == "starvation":
            s.add_argument("--seeds", type=int, default=1, help="number of seeds")
    return p


def _setup_logging() -> None:
    name = os.environ.get("BKB_KIT_LOG", "error").lower()
    level = LOG_LEVELS.get(name, logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.command == "starvation":
            seeds = range(args.seed_offset, args.seed_offset + args.seeds)
            harness.cmd_starvation(args.output or "out/starvation", seeds=tuple(seeds))
            return 0
        cfg = load_config(args.config)
        if args.command == "run":
            res = harness.cmd_run(cfg, args.output, args.workers, args.seed_offset)
            print(res.summary_path)
        elif args.command == "verify":
            res = harness.cmd_verify(cfg, args.output, args.workers, args.seed_offset)
            print(f"run-level failure fraction: {res.failure_fraction:.3f}")
        else:
            res = harness.cmd_bench(cfg, args.output, args.seed_offset)
            print(" ".join(f"{k}_exponent={v:.3f}" for k, v in res.exponents.items()))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logging.getLogger("bkb_kit").debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
