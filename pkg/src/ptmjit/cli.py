"""Command line entry point.

    ptmjit convert-legacy qt_train.pkl data/qt.jsonl
    ptmjit run plan.yaml --out runs [--dry-run] [--workers N] [--seed S] [--offline] [--plots]
    ptmjit report runs/<plan-hash> [--plots]
    ptmjit compare runs/<hash>/toy/ds/full-s0 runs/<hash>/scratch/ds/full-s0 --out cmp

Exit codes: 0 success, 1 runtime failure (including failed grid cells), 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("ptmjit")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ptmjit", description="Pre-trained backbone JIT defect prediction toolkit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert-legacy", help="convert a DeepJIT/CC2Vec pickle into a canonical JSONL corpus")
    c.add_argument("input")
    c.add_argument("output")

    r = sub.add_parser("run", help="run an experiment plan")
    r.add_argument("plan")
    r.add_argument("--out", default="runs")
    r.add_argument("--cache", default=None, help="backbone cache root (default $PTMJIT_CACHE)")
    r.add_argument("--offline", action="store_true", default=None, help="never fetch backbones from the hub")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--seed", type=int, default=None, help="override the plan's seed list with one seed")
    r.add_argument("--scenario", default=None)
    r.add_argument("--epochs-multiplier", type=float, default=None)
    r.add_argument("--dry-run", action="store_true")
    r.add_argument("--plots", action="store_true")

    rep = sub.add_parser("report", help="tables and plot series for a report directory")
    rep.add_argument("report_dir")
    rep.add_argument("--out", default=None)
    rep.add_argument("--plots", action="store_true")

    cmp_ = sub.add_parser("compare", help="t-test matrix and efficiency table across finished runs")
    cmp_.add_argument("runs", nargs="+", help="cell directories (each holding result.json)")
    cmp_.add_argument("--out", required=True)
    cmp_.add_argument("--binary-threshold", type=float, default=None,
                      help="t-test thresholded 0/1 predictions instead of raw scores")
    return p


def cmd_convert(args) -> int:
    from .corpus import CorpusError, convert_legacy

    try:
        corpus = convert_legacy(args.input, args.output)
    except CorpusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{args.output}: {corpus.total_count} records, {corpus.defect_count} defective")
    return EXIT_OK


def cmd_run(args) -> int:
    from .experiments import ExperimentPlan, PlanError, run_plan

    try:
        plan = ExperimentPlan.load(args.plan) if Path(args.plan).is_file() else None
        if plan is None:
            print(f"error: plan file not found: {args.plan}", file=sys.stderr)
            return EXIT_USAGE
        if args.seed is not None:
            plan = replace(plan, seeds=[args.seed])
        if args.scenario is not None:
            plan = replace(plan, scenario=args.scenario)
        if args.epochs_multiplier is not None:
            plan = replace(plan, epochs_multiplier=args.epochs_multiplier)
    except PlanError as exc:
        print(f"error: invalid plan: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.dry_run:
        out_dir = Path(args.out) / plan.plan_hash
        print(f"plan {plan.plan_hash} -> {out_dir}")
        for cell in plan.cells():
            print(f"  {cell.label}")
        print(f"{len(plan.cells())} cells")
        return EXIT_OK

    try:
        report = run_plan(plan, args.out, workers=args.workers, cache=args.cache, offline=args.offline)
    except Exception as exc:  # noqa: BLE001 - top-level runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.plots:
        from .report import build_report

        build_report(report, plots=True)
    for c in report.cells:
        auc = f"{c.metrics.auc:.3f}" if c.metrics else "-"
        print(f"{c.cell.label}\t{c.status}\tauc={auc}" + ("\t(cached)" if c.skipped else ""))
    print(f"report: {report.out_dir}")
    failed = report.failed_cells()
    if failed:
        for c in failed:
            print(f"failed: {c.cell.label}: {(c.error or '').splitlines()[0]}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args) -> int:
    from .experiments import load_report
    from .report import build_report

    try:
        report = load_report(args.report_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        written = build_report(report, args.out, plots=args.plots)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for name, path in written.items():
        print(f"{name}\t{path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .experiments import CellResult, compare_runs

    cells = []
    for d in args.runs:
        if not (Path(d) / "result.json").is_file():
            print(f"error: {d}: no result.json", file=sys.stderr)
            return EXIT_USAGE
        cells.append(CellResult.load(d))
    try:
        bundle = compare_runs(cells, args.binary_threshold)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = bundle.write(args.out)
    for row in bundle.ttest.render():
        print("\t".join(row))
    print(f"written: {out}")
    return EXIT_OK


COMMANDS = {"convert-legacy": cmd_convert, "run": cmd_run, "report": cmd_report, "compare": cmd_compare}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
