"""Command-line interface: dataset generation, plan execution, reports,
and the oracle verification suites."""

from __future__ import annotations

import argparse
import sys

from . import harness, oracles
from .synthdata import LabelDistribution, make_dataset, save_dataset


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ugel",
        description="Uncertainty-guided edge learning laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset file")
    gen.add_argument(
        "--dist",
        required=True,
        choices=["bimodal", "negskew", "uniform", "gaussian"],
    )
    gen.add_argument("--pool", type=int, required=True, help="pool size N")
    gen.add_argument("--test", type=int, required=True, help="test size K")
    gen.add_argument("--patch", type=int, default=16, help="patch side length S")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--m-init", type=int, default=12, help="initial labelled count")
    gen.add_argument("--endpoint-mass", type=float, default=0.0)
    gen.add_argument("--out", required=True, help="output .ugeldata path")

    run = sub.add_parser("run", help="execute an experiment plan")
    run.add_argument("--config", required=True, help="plan file (JSON)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--resume", action="store_true")

    report = sub.add_parser("report", help="emit report tables from a run directory")
    report.add_argument("--in", dest="in_dir", required=True)
    report.add_argument("--checkpoints", default=None, help="e.g. 2,4,6,8")
    report.add_argument("--format", default="csv", choices=["csv", "tsv"])

    verify = sub.add_parser("verify", help="run the oracle suites")
    verify.add_argument("--fast", action="store_true")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "gen":
        dist = LabelDistribution(args.dist, endpoint_mass=args.endpoint_mass)
        splits = make_dataset(
            dist, args.pool, args.test, args.m_init, args.patch, args.seed
        )
        save_dataset(splits, args.out)
        print(
            f"wrote {args.out}: pool={args.pool} test={args.test} "
            f"patch={args.patch} dist={args.dist} seed={args.seed}"
        )
        return 0

    if args.command == "run":
        plan = harness.ExperimentPlan.from_file(args.config)
        matrix = harness.run_plan(
            plan, args.out, workers=args.workers, resume=args.resume
        )
        failed = matrix.failed_cells()
        n_cells = len(plan.methods) * len(plan.seeds)
        print(f"ran {n_cells - len(failed)}/{n_cells} cells into {args.out}")
        for cell in failed:
            print(f"FAILED {cell.method} seed={cell.seed}: {cell.error}")
        return 1 if failed else 0

    if args.command == "report":
        matrix = harness.load_matrix(args.in_dir)
        checkpoints = None
        if args.checkpoints is not None:
            checkpoints = [int(c) for c in args.checkpoints.split(",") if c]
        paths = harness.emit_report(matrix, args.in_dir, checkpoints, args.format)
        for p in paths:
            print(f"wrote {p}")
        return 0

    ok = oracles.run_all(verbose=True, fast=args.fast)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
