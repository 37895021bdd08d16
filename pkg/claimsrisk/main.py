"""
Command-line entry point for the claims risk pipeline

Usage: python -m claimsrisk.main <subcommand> [flags]
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from claimsrisk import __version__
from claimsrisk.commands.tools import ALL_COMMANDS, CommandInput, run_command
from claimsrisk.errors import ClaimsRiskError
from claimsrisk.settings import settings

logger = logging.getLogger("claimsrisk")

HELP = {
    "validate-taxonomy": "Validate a taxonomy TSV",
    "simulate": "Generate a synthetic taxonomy, cohort and incidence series",
    "featurize": "Build and cache the design matrix",
    "cv-fit": "Cross-validate the lambda path and refit on all data",
    "fit": "Fit the full-data lambda path",
    "predict": "Score a cohort with a frozen model",
    "metrics": "Evaluate a prediction file",
    "aggregate": "Export code effects and group rankings",
    "risk-index": "Build a cross-fitted risk index",
    "profile": "Fit age profiles conditional on the risk index",
    "benchmark": "Compare feature configs and external predictions",
    "holdout-eval": "Evaluate a frozen model on a later cohort",
    "report": "Collect plot data from finished runs",
    "describe": "Descriptive statistics by outcome group",
}


def _common() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--taxonomy", help="Taxonomy TSV (system, code, level, parent, name)")
    parser.add_argument("--cohort", help="Cohort JSONL")
    parser.add_argument("--incidence", help="Incidence series CSV used to impute the incidence predictor")
    parser.add_argument("--outcome", default=settings.outcome, choices=["y1", "y2", "y3"])
    parser.add_argument("--config", help="Feature config JSON")
    parser.add_argument("--seed", type=int, default=settings.seed)
    parser.add_argument("--folds", type=int, default=settings.folds)
    parser.add_argument("--lambda-grid", help="N, N:ratio or a comma-separated list")
    parser.add_argument("--threads", type=int, default=settings.threads)
    parser.add_argument("--out-dir", default=settings.out_dir)
    parser.add_argument("--log-level", default=settings.log_level)
    parser.add_argument("--verbose", action="store_true", help="Write the solver convergence trace")
    parser.add_argument("--drop-excluded-ops", action="store_true",
                        help="Skip OPS rows outside chapters 5, 6 and 8")
    parser.add_argument("--bits", action="store_true", help="Weight of evidence in bits")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="claimsrisk",
        description="Hierarchical lasso risk models for coded claims data",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()
    parsers = {name: sub.add_parser(name, parents=[common], help=HELP[name]) for name in ALL_COMMANDS}

    parsers["simulate"].add_argument("--generator", help="Generator spec JSON")
    parsers["simulate"].add_argument("--n-persons", type=int)
    parsers["simulate"].add_argument("--wave-seed", type=int, help="Seed of a second, later cohort")
    parsers["simulate"].add_argument("--full-scale", action="store_true")

    parsers["fit"].add_argument("--lam", type=float, help="Stop the path at this lambda")

    for name in ("predict", "aggregate", "holdout-eval"):
        parsers[name].add_argument("--model", required=True, help="model.json from cv-fit or fit")
    for name in ("predict", "holdout-eval"):
        parsers[name].add_argument("--exclude", help="File with person ids to leave out")

    parsers["metrics"].add_argument("--predictions", required=True, help="CSV with id,logit")
    parsers["metrics"].add_argument("--target-prevalence", type=float)

    for name in ("cv-fit", "aggregate"):
        parsers[name].add_argument("--min-group-size", type=int, default=0)

    for name in ("risk-index", "profile"):
        parsers[name].add_argument("--cancel", nargs="*", default=[],
                                   help="Columns or categorical features to cancel")
        parsers[name].add_argument("--condition", nargs="*", default=[], help="feature=category")
    for name in ("risk-index", "profile", "describe"):
        parsers[name].add_argument("--age-feature", default="age_group")
        parsers[name].add_argument("--gender-feature", default="gender")
    parsers["risk-index"].add_argument("--bins", type=int, default=20)
    parsers["risk-index"].add_argument("--top-fraction", type=float, default=0.05)

    parsers["benchmark"].add_argument("--configs", nargs="*", default=[])
    parsers["benchmark"].add_argument("--outcomes", nargs="*", default=[], choices=["y1", "y2", "y3"])
    parsers["benchmark"].add_argument("--external", nargs="*", default=[], help="name=path with id,logit")

    parsers["report"].add_argument("--runs", nargs="+", required=True, help="name=run directory")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    values = {k: v for k, v in vars(args).items() if k in CommandInput.model_fields}
    values["argv"] = argv
    try:
        summary = run_command(args.command, CommandInput(**values))
    except (ClaimsRiskError, OSError, ValidationError) as e:
        logger.debug("Command failed", exc_info=True)
        error = {"error": type(e).__name__, "message": str(e), "command": args.command}
        print(json.dumps(error), file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
