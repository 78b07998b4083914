"""Command line entry point.

    mesoreduce reduce  <scenario.json>   print the reduced operator
    mesoreduce evolve  <scenario.json>   run the scenario's engine
    mesoreduce compare <scenario.json>   quantum vs Wigner difference series
    mesoreduce check   <scenario.json>   invariance-depth search

Exit codes: 0 ok, 2 configuration, 3 numerical instability, 4 invariant breach.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .errors import MesoError
from .runner import OUT_ENV, run
from .scenario import load_scenario


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mesoreduce",
        description="Cluster coarse-graining and master-equation engines.",
        epilog=f"Set {OUT_ENV} to redirect outputs to ${OUT_ENV}/<scenario name>.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "reduce": "apply the partition chain and print the reduced operator",
        "evolve": "run the engine named in the scenario",
        "compare": "run quantum and Wigner engines and emit their difference",
        "check": "search for the invariance depth of each term family",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("scenario", help="path to a scenario JSON file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", help="output directory (beats the environment and config)")
        p.add_argument("--max-depth", type=int, default=None, help="limit for the invariance search")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_scenario(args.scenario)
    except MesoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    if args.max_depth is not None and args.max_depth < 1:
        print("error: --max-depth must be at least 1", file=sys.stderr)
        return 2
    result = run(cfg, args.command, out=args.out, seed=args.seed, max_depth=args.max_depth)
    if result.stdout:
        sys.stdout.write(result.stdout)
    if result.exit_code and "error" in result.summary:
        print(f"error: {result.summary['error']}", file=sys.stderr)
        return result.exit_code
    for name, m in sorted(result.summary.get("monitors", {}).items()):
        status = "ok" if m["passed"] else "FAIL"
        print(f"{status:4} {name} = {m['value']:.6g} (limit {m['limit']:.3g})", file=sys.stderr)
    if result.out_dir is not None:
        print(f"outputs: {result.out_dir}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
