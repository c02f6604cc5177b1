"""``valphase-bench`` command line.

Exit codes: 0 success, 1 configuration or input error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from valphase.bench.config import load_config
from valphase.bench.report import CompareError, compare, read_summary, write_compare
from valphase.errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _run(args) -> int:
    from valphase.bench.runner import run_experiment

    try:
        spec = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {args.config}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.no_plot:
        spec.plot = False
    try:
        result = run_experiment(spec)
    except Exception as e:  # noqa: BLE001 - surface anything as a runtime failure
        logging.getLogger("valphase").exception("experiment failed")
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"blocks:  {result.csv_path}")
    print(f"summary: {result.summary_path}")
    for fig in result.figures:
        print(f"figure:  {fig}")
    for cell in result.summary:
        line = (f"{cell['mode']}/{cell['backend']} workers={cell['workers']} "
                f"block_size={cell['block_size']} throughput={cell['throughput_mean']:.0f} tx/s "
                f"total={cell['total_us_mean'] / 1000:.2f} ms")
        if cell["error"]:
            line += f" ERROR {cell['error']}"
        print(line)
    return EXIT_RUNTIME if result.failed else EXIT_OK


def _compare(args) -> int:
    try:
        rows = compare(read_summary(args.a), read_summary(args.b))
    except CompareError as e:
        print(f"compare error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        with open(args.out, "w", newline="") as f:
            write_compare(rows, f)
    write_compare(rows, sys.stdout)
    if args.plot:
        from valphase.bench.plots import plot_compare
        print(f"figure: {plot_compare(rows, args.plot)}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="valphase-bench",
                                description="Validation-phase latency breakdown benchmark.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", required=True, help="key = value experiment config")
    run.add_argument("--no-plot", action="store_true", help="skip figure rendering")
    run.set_defaults(func=_run)

    cmp_ = sub.add_parser("compare", help="ratio report between two summary files")
    cmp_.add_argument("a", help="summary CSV of the reference run (e.g. baseline)")
    cmp_.add_argument("b", help="summary CSV of the candidate run (e.g. optimized)")
    cmp_.add_argument("--out", help="also write the ratio CSV here")
    cmp_.add_argument("--plot", metavar="PNG", help="render a ratio bar chart")
    cmp_.set_defaults(func=_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
