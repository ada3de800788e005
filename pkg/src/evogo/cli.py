"""Command line entry point: ``evogo run | vectors | summarize``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .errors import SnapshotMissing


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evogo", description="EvoGO experiments and baselines")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute an experiment plan")
    r.add_argument("--config", type=Path, help="INI plan file")
    r.add_argument("--algo", choices=harness.ALGORITHMS)
    r.add_argument("--benchmark", choices=harness.benchmarks.KINDS)
    r.add_argument("--dim", type=int)
    r.add_argument("--seeds", help="count k (seeds 0..k-1), a list a,b,c or a range a-b")
    r.add_argument("--pop", type=int)
    r.add_argument("--gens", type=int)
    r.add_argument("--variant", choices=("kg", "lcb", "realeval"))
    r.add_argument("--ablation", choices=("none", "singlenet"))
    r.add_argument("--out", type=Path)
    r.add_argument("--workers", type=int,
                   help=f"parallel runs (default: ${harness.WORKERS_ENV} or 1)")

    v = sub.add_parser("vectors", help="dump generator transport vectors of a generation")
    v.add_argument("--run", type=Path, required=True,
                   help="result directory, its runs/ folder, or one run CSV")
    v.add_argument("--generation", type=int, required=True)
    v.add_argument("--out", type=Path, help="output folder (default: vectors/ beside runs/)")

    s = sub.add_parser("summarize", help="rebuild summary.csv from run CSVs")
    s.add_argument("--out", type=Path, required=True)

    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _cmd_run(args) -> int:
    if args.config is not None:
        plan = harness.load_plan(args.config, out_dir=args.out, workers=args.workers)
    else:
        if not (args.algo and args.benchmark and args.dim):
            raise SystemExit("run needs --config or all of --algo, --benchmark and --dim")
        cell = harness.ExperimentCell(args.algo, args.benchmark, args.dim, [0])
        plan = harness.ExperimentPlan([cell], args.out or Path("results"),
                                      args.workers or harness.workers_from_env())
    plan = harness.override_plan(plan, algo=args.algo, benchmark=args.benchmark, dim=args.dim,
                                 seeds=args.seeds, pop=args.pop, gens=args.gens,
                                 variant=args.variant, ablation=args.ablation)
    status = harness.run_plan(plan)
    print(plan.out_dir / "summary.csv")
    return status


def _run_csvs(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    runs = path / "runs" if (path / "runs").is_dir() else path
    return harness.run_csvs(runs)


def _vectors_folder(run_csv: Path) -> Path:
    # keep dumps out of runs/ so they are never mistaken for run files
    parent = run_csv.parent
    return (parent.parent if parent.name == "runs" else parent) / "vectors"


def _cmd_vectors(args) -> int:
    csvs = _run_csvs(args.run)
    if not csvs:
        print(f"no run CSVs under {args.run}", file=sys.stderr)
        return 1
    missing = 0
    for path in csvs:
        hist = harness.history_from_files(path)
        folder = args.out or _vectors_folder(path)
        target = folder / f"{path.stem}-g{args.generation}-vectors.csv"
        try:
            harness.dump_vectors(hist, args.generation, target)
        except SnapshotMissing as exc:
            print(f"{path.stem}: {exc}", file=sys.stderr)
            missing += 1
            continue
        print(target)
    return 1 if missing == len(csvs) else 0


def _cmd_summarize(args) -> int:
    print(harness.summarize(args.out))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "vectors": _cmd_vectors, "summarize": _cmd_summarize}
    return handler[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
