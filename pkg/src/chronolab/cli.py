"""Command-line interface: run, validate and report subcommands.

Exit codes: 0 success, 1 pipeline stage failure, 2 configuration/schema
violation.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ChronolabError, ConfigurationError, StageFailure


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="chronolab",
        description=(
            "Numerical laboratory for timeless quantum mechanics: joint "
            "eigenstates, exact marginal-conditional factorization, coupled "
            "pseudoeigenvalue equations and emergent time-dependent dynamics."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario pipeline")
    p_run.add_argument("--config", required=True, help="scenario config file (INI)")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--workers", type=int, default=1, help="sweep-point concurrency")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument(
        "--stages", default=None,
        help="comma-separated subset of the configured pipeline",
    )

    p_val = sub.add_parser("validate", help="schema and physics checks without running")
    p_val.add_argument("--config", required=True, help="scenario config file (INI)")

    p_rep = sub.add_parser("report", help="render figures from an existing run directory")
    p_rep.add_argument("--out", required=True, help="run directory holding manifest.json")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            from .runner import run

            stages = args.stages.split(",") if args.stages else None
            manifest = run(args.config, args.out, workers=args.workers,
                           seed=args.seed, stages=stages)
            for record in manifest.stages:
                print(f"  {record.name:<14} {record.status:<7} {record.seconds:8.2f}s")
            print(f"wrote {len(manifest.files)} artifacts to {manifest.out_dir}")
            return 0
        if args.command == "validate":
            from .runner import validate

            issues = validate(args.config)
            if not issues:
                print("config is valid: no issues found")
                return 0
            for issue in issues:
                print(f"issue: {issue}")
            return 2
        if args.command == "report":
            from .report import render

            written = render(args.out)
            for name in written:
                print(f"rendered {name}")
            return 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StageFailure as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 1
    except ChronolabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
