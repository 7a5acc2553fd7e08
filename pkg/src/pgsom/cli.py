"""Command-line entry point: ``pgsom`` / ``python -m pgsom``."""

import argparse
import dataclasses
import logging
import os
import sys

from .agent import METHODS, STABILIZERS
from .harness import RunConfig, emit_outputs, run_audit, run_experiment, run_grid, summary_table


def build_parser():
    p = argparse.ArgumentParser(prog="pgsom", description="Policy-gradient optimizer experiments and oracle audit.")
    p.add_argument("--config", help="JSON run configuration; flags below override its fields")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--stabilizer", help=f"one of {STABILIZERS} or a '+'-joined combination")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seeds", help="comma-separated integer seeds, e.g. 0,1,2,3,4")
    p.add_argument("--lr", type=float)
    p.add_argument("--env", help="cartpole or mdp:<path.json>")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("--jobs", type=int, default=os.cpu_count(), help="worker processes")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--audit", action="store_true", help="run the oracle audit suite and exit 0/1")
    mode.add_argument("--grid", action="store_true", help="run all method x stabilizer combinations")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args):
    config = RunConfig.from_json(args.config) if args.config else RunConfig()
    overrides = {
        "method": args.method,
        "stabilizer": args.stabilizer,
        "episodes": args.episodes,
        "lr": args.lr,
        "env": args.env,
    }
    if args.seeds:
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    return dataclasses.replace(config, **{k: v for k, v in overrides.items() if v is not None})


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.audit:
        report = run_audit(os.path.join(args.out, "audit.json"))
        for c in report["checks"]:
            print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}  max_abs_error={c['max_abs_error']:.3e}")
        return 0 if report["passed"] else 1

    try:
        config = config_from_args(args)
        records = run_grid(config, n_jobs=args.jobs) if args.grid else run_experiment(config, n_jobs=args.jobs)
        paths = emit_outputs(records, args.out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for row in summary_table(records):
        print(f"{row['model']:<40} {row['mean']:8.2f} {row['std']:8.2f}")
    print(f"wrote {', '.join(sorted(os.path.basename(p) for p in paths.values()))} to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
