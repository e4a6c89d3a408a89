"""Command-line front: run / ablate / check / version.

Exit codes: 0 success (for `check`, all suites passed), 1 a suite failed or
a library error surfaced, 2 usage errors (argparse's default).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from . import experiment as ex
from . import selfcheck as sc
from .errors import LibraryError


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="structattn")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate one config")
    run.add_argument("--config", required=True, help="path to a key = value config file")

    ab = sub.add_parser("ablate", help="sweep one axis of a base config")
    ab.add_argument("--config", required=True)
    ab.add_argument("--axis", required=True, choices=("variant", "rank"))
    ab.add_argument(
        "--values",
        required=True,
        help="comma-separated axis values, e.g. none,structured or 0,1,3,5,7,9",
    )

    chk = sub.add_parser("check", help="randomized self-check suites")
    chk.add_argument(
        "--suite",
        choices=("oracle", "grad", "invariants"),
        help="one suite; all three when omitted",
    )

    sub.add_parser("version", help="print the package version")
    return p


def _cmd_run(args) -> int:
    cfg = ex.parse_config(args.config)
    record = ex.run_experiment(cfg, log=print)
    print(",".join(record.columns))
    print(",".join(record.row()))
    if record.diverged:
        print("warning: training diverged; record flagged", file=sys.stderr)
    return 0


def _cmd_ablate(args) -> int:
    cfg = ex.parse_config(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        print("no axis values given", file=sys.stderr)
        return 2
    records = ex.run_ablation(cfg, args.axis, values, log=print)
    for v, r in zip(values, records):
        shown = " ".join(f"{k}={val:.4f}" for k, val in r.metrics.items())
        flag = " DIVERGED" if r.diverged else ""
        print(f"{args.axis}={v}: {shown or 'no metrics'}{flag}")
    return 0


def _cmd_check(args) -> int:
    dump_dir = os.path.join(os.environ.get(ex.OUTPUT_ENV, "runs"), "replays")
    if args.suite == "oracle":
        outcomes = [sc.run_oracle_checks(dump_dir=dump_dir)]
    elif args.suite == "grad":
        outcomes = [sc.run_gradient_checks()]
    elif args.suite == "invariants":
        outcomes = [sc.run_invariant_checks(dump_dir=dump_dir)]
    else:
        outcomes, _ = sc.run_all(dump_dir=dump_dir)
    for o in outcomes:
        print(o.line())
    return 0 if all(o.passed for o in outcomes) else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "ablate":
            return _cmd_ablate(args)
        if args.command == "check":
            return _cmd_check(args)
        print(f"structattn {__version__}")
        return 0
    except LibraryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
