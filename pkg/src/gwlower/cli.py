"""Command-line front end: ``gwlower <subcommand> [options]``.

Type indices on the command line are 1-based.  The exit code is 0 exactly
when every verdict of the run is ``pass``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .errors import GWError
from .harness import ExperimentPlan, RunRecord, bless, default_cache_dir, golden_diff, run_plan, verify_all


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _range(text: str) -> list[int]:
    lo, _, hi = text.partition(":")
    return [int(lo), int(hi or lo)]


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda value: argparse.SUPPRESS) if suppress else (lambda value: value)
    parser.add_argument("--spec", default=default(None), help="TOML spec file or corpus name (SPEC-S, SPEC-B, SPEC-C1-FAIL)")
    parser.add_argument("--out", default=default("gwlower-out"), help="output directory")
    parser.add_argument("--cache", default=default(None), help="cache directory (default: $GWLOWER_CACHE)")
    parser.add_argument("--mode", choices=("exact", "float"), default=default(None), help="arithmetic mode")
    parser.add_argument("--threads", type=int, default=default(1), help="worker threads")
    parser.add_argument("--seed", type=int, default=default(12345), help="64-bit RNG seed")
    parser.add_argument("--emit", action="append", choices=("csv", "json", "plot-data"), default=default(None),
                        help="artifact formats (repeatable; default csv)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gwlower", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gwlower {__version__}")
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    add("classify", "validate the spec and print its spectral data and regime")

    p = add("dist", "exact law of Z_n")
    p.add_argument("--initial", type=_ints, help="initial population, e.g. 1,0")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--box", type=_ints)
    p.add_argument("--method", choices=("compose", "forward"), default="compose")
    p.add_argument("--budget", type=float, help="allowed escaped mass (default 1e-9)")

    p = add("density", "characteristic function and density of W")
    p.add_argument("--dx", type=float, default=0.05)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--t-max", type=float, default=12.0)

    p = add("schroder-check", "convolution identity and ratio statistics (Schroeder regime)")
    p.add_argument("--type", type=int, default=1)
    p.add_argument("--j", type=_ints, default=[1, 2])
    p.add_argument("--m", type=_ints, default=[2, 4, 8])
    p.add_argument("--box", type=_ints, help="box for the generation laws (too small -> truncation failure)")

    p = add("boettcher-check", "support sets, K recursion, condition (C1) and bounded-log bands")
    p.add_argument("--type", type=int, default=1)
    p.add_argument("--n-max", type=int, default=4)
    p.add_argument("--n-range", type=_range, default=[3, 6], help="e.g. 3:6")
    p.add_argument("--levels", type=_floats, default=[0.0, 0.5, 1.0], help="direction sweep levels")

    p = add("tilt", "tilted law, tilt identity, tilt statistics and local CLT table")
    p.add_argument("--type", type=int, default=1)
    p.add_argument("--h", type=_floats, required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--l", type=_ints, help="population for the identity and statistics (default all ones)")
    p.add_argument("--clt-l", type=_ints, help="population for the local CLT table")

    p = add("is-estimate", "tilted importance-sampling estimate")
    p.add_argument("--type", type=int, default=1)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--h", type=_floats, required=True)
    p.add_argument("--event", required=True, help="eq:k1,k2,... or total_le:k")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--blocks", type=int, default=16)
    p.add_argument("--exact", type=float, help="reference probability for a 4-sigma verdict")

    add("report", "summarize every run recorded in the output directory")

    p = add("run", "execute a serialized plan")
    p.add_argument("plan", help="plan JSON file")

    p = add("verify-all", "run the acceptance suite")
    p.add_argument("--only", type=_ints, help="subset of criteria, e.g. 1,4")

    p = add("golden-diff", "compare a run with golden artifacts")
    p.add_argument("record", help="record.json of the run")
    p.add_argument("--golden", required=True, help="golden directory")
    p.add_argument("--bless", action="store_true", help="copy the run into the golden directory instead")
    return parser


def plan_from_args(args) -> ExperimentPlan:
    cmd = args.command
    params: dict = {}
    if cmd == "dist":
        params = {"n": args.n, "method": args.method}
        if args.initial:
            params["initial"] = args.initial
        if args.box:
            params["box"] = args.box
        if args.budget is not None:
            params["budget"] = args.budget
    elif cmd == "density":
        params = {"dx": args.dx, "tol": args.tol, "t_max": args.t_max}
    elif cmd == "schroder-check":
        params = {"type": args.type, "j": args.j, "m": args.m}
        if args.box:
            params["box"] = args.box
    elif cmd == "boettcher-check":
        params = {"type": args.type, "n_max": args.n_max, "n_range": args.n_range, "tilt_levels": args.levels}
    elif cmd == "tilt":
        params = {"type": args.type, "h": args.h, "n": args.n}
        if args.l:
            params["l"] = args.l
        if args.clt_l:
            params["clt_l"] = args.clt_l
    elif cmd == "is-estimate":
        params = {"type": args.type, "n": args.n, "h": args.h, "event": args.event, "samples": args.samples,
                  "blocks": args.blocks}
        if args.exact is not None:
            params["exact"] = args.exact
    return ExperimentPlan(cmd, args.spec, params, args.mode, args.seed, tuple(args.emit or ("csv",)))


def _print(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    cache = default_cache_dir(args.cache)
    try:
        if args.command == "verify-all":
            record = verify_all(out, args.only, args.threads)
            for line in record.summary["lines"]:
                print(line)
            return 0 if record.ok else 1
        if args.command == "golden-diff":
            record = RunRecord.load(args.record)
            run_root = Path(args.record).resolve().parent.parent
            if args.bless:
                print(f"blessed {bless(record, args.golden, run_root)}")
                return 0
            report = golden_diff(record, args.golden, run_root)
            _print(report.as_dict())
            return 0 if report.ok else 1
        plan = ExperimentPlan.load(args.plan) if args.command == "run" else plan_from_args(args)
    except GWError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    record = run_plan(plan, out, cache, args.threads)
    _print({"directory": str(out / record.directory), "verdicts": record.verdicts, "summary": record.summary,
            "error": record.error})
    return 0 if record.ok else 1


if __name__ == "__main__":
    sys.exit(main())
