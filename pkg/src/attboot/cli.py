"""Command line entry point: ``attboot simulate | placebo | bootstrap``.

Worker count comes from ``--workers`` or the ``ATTBOOT_WORKERS`` environment
variable. On failure the command exits nonzero and prints a JSON object with
``error`` and ``message`` keys to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from attboot.bootstrap import METHODS
from attboot.errors import AttbootError


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="attboot", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the Monte Carlo scenario grid")
    sim.add_argument("--plan", required=True, help="experiment plan JSON")
    sim.add_argument("--workers", type=int, default=None)

    pla = sub.add_parser("placebo", help="random-label placebo study on a control-only dataset")
    pla.add_argument("--plan", required=True, help="placebo plan JSON")
    pla.add_argument("--workers", type=int, default=None)

    bs = sub.add_parser("bootstrap", help="bootstrap the ATT of one dataset")
    bs.add_argument("--data", required=True, help="CSV file with a header row")
    bs.add_argument("--manifest", required=True, help='JSON {"treatment", "outcome", "covariates"}')
    bs.add_argument("--method", choices=METHODS, default="treatment")
    bs.add_argument("--B", type=int, default=500)
    bs.add_argument("--seed", type=int, default=0)
    bs.add_argument("--caliper", type=float, default=0.02)
    bs.add_argument("--algorithm", choices=("optimal", "greedy-nearest"), default="optimal")
    bs.add_argument("--estimand", choices=("att", "atc"), default="att")
    bs.add_argument("--refit-propensity", action="store_true")
    bs.add_argument("--out", help="write the result JSON here instead of stdout")
    bs.add_argument("--replicates-csv", help="also write replicate estimates as a one-column CSV")
    bs.add_argument("--workers", type=int, default=None)
    return ap


def _run(args) -> int:
    from attboot import runner

    if args.command == "simulate":
        plan = runner.ExperimentPlan.from_json(args.plan)
        summary = runner.run_grid(plan, workers=args.workers)
        print(json.dumps({"output_dir": plan.output_dir, "rows": len(summary)}))
    elif args.command == "placebo":
        plan = runner.PlaceboPlan.from_json(args.plan)
        report = runner.run_placebo(plan, workers=args.workers)
        brief = {k: v for k, v in report.items() if k not in ("assignments", "runs")}
        print(json.dumps(runner._jsonable(brief), indent=2))
    else:
        result = runner.run_single(
            args.data,
            args.manifest,
            method=args.method,
            B=args.B,
            seed=args.seed,
            caliper=args.caliper,
            algorithm=args.algorithm,
            refit_propensity=args.refit_propensity,
            estimand=args.estimand,
            workers=args.workers,
        )
        if args.replicates_csv:
            result.write_replicates_csv(args.replicates_csv)
        if args.out:
            result.to_json(args.out)
        else:
            print(result.to_json())
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except (AttbootError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
