"""Command-line entry point: ``pikemix {run,verify,sweep,example1}``.

Exit codes: 0 success, 1 validation/parse/IO failure, 2 property-suite failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

from .core import InputError
from .experiment import (
    DEFAULT_SWEEP_CONFIG,
    ConfigError,
    Example1Config,
    example1_csv,
    load_config,
    parse_config,
    records_to_csv,
    run_experiment,
    sweep_csv,
    sweep_rows,
    write_text,
)

log = logging.getLogger("pikemix")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_PROPERTY = 2

SUITE_NAMES = ("kkt", "descent", "tightness", "example1", "duality", "lemmas", "convergence",
               "balance", "estimator", "all")


def _out_path(out: Optional[str], default: str) -> str:
    if out is None:
        return default
    if os.path.isdir(out):
        return os.path.join(out, default)
    return out


def cmd_run(args) -> int:
    if not args.config:
        log.error("run needs --config")
        return EXIT_INPUT
    cfg = load_config(args.config, args.seed)
    records = run_experiment(cfg)
    path = _out_path(args.out, f"run_{cfg.kind}_seed{cfg.seed}.csv")
    write_text(path, records_to_csv(records, cfg.k))
    log.info("wrote %d rows to %s", len(records), path)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.seed) if args.config else parse_config(DEFAULT_SWEEP_CONFIG, args.seed)
    rows = sweep_rows(cfg)
    path = _out_path(args.out, "sweep.csv")
    write_text(path, sweep_csv(rows, cfg.k))
    log.info("wrote %d policies to %s", len(rows), path)
    return EXIT_OK


def cmd_example1(args) -> int:
    cfg = Example1Config() if args.seed is None else Example1Config(seed=args.seed)
    path = _out_path(args.out, "example1.csv")
    write_text(path, example1_csv(cfg))
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    results = run_suite(args.suite)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} properties passed")
    return EXIT_OK if failed == 0 else EXIT_PROPERTY


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors (1); 2 is reserved for failed properties
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pikemix", description="Adaptive multi-task data mixing experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--out", help="output CSV path or directory")
        sp.add_argument("--seed", type=int, help="override the config seed")

    common(sub.add_parser("run", help="run one configured trainer and write its CSV trace"))
    common(sub.add_parser("sweep", help="static-weight grid plus one PiKE run"))
    common(sub.add_parser("example1", help="two-axis adaptive vs static table"), config=False)
    v = sub.add_parser("verify", help="run a property suite")
    v.add_argument("--suite", default="all", choices=SUITE_NAMES)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "example1": cmd_example1, "verify": cmd_verify}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
