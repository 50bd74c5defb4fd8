"""
Command-line interface.

Every subcommand emits CSV or JSON only. On failure the error is printed
to stderr as JSON and the process exits with the error's code:
2 configuration, 3 data, 4 estimation, 1 for anything else.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

from ets_effects import __version__
from ets_effects.config import RunConfig
from ets_effects.constants import (
    INEFFICIENCY_LIST,
    MATCH_SCHEME_LIST,
    ExitCode,
    MatchScheme,
)
from ets_effects.errors import EtsEffectsError
from ets_effects.frontier import (
    frontier_table,
    indexed_median_series,
    median_distance_series,
    score_frame,
)
from ets_effects.matching import nn_match, reweight
from ets_effects.panel import export_csv
from ets_effects.pipeline import PipelineRunner, write_table
from ets_effects.synthgen import PRESETS, generate, preset

logger = logging.getLogger(__name__)


def _emit(frame: pd.DataFrame, out: Optional[str]) -> None:
    if out:
        write_table(frame, Path(out))
        logger.info("Wrote %s", out)
    else:
        sys.stdout.write(frame.to_csv(index=False, lineterminator="\n"))


def _config(args: argparse.Namespace) -> RunConfig:
    """Config file (if any) with command-line flags applied on top."""
    overrides = {
        "input": getattr(args, "input", None),
        "preset": getattr(args, "preset", None),
        "n_firms": getattr(args, "n_firms", None),
        "seed": getattr(args, "seed", None),
        "n_jobs": getattr(args, "n_jobs", None),
        "outcomes": getattr(args, "outcomes", None),
        "covariates": getattr(args, "covariates", None),
        "neighbors": getattr(args, "neighbors", None),
        "support": getattr(args, "support", None),
        "pre_year": getattr(args, "pre_year", None),
        "inefficiency": getattr(args, "inefficiency", None),
        "satt_industry": getattr(args, "industry", None),
        "output_dir": getattr(args, "out_dir", None),
        "db_url": getattr(args, "db", None),
    }
    if getattr(args, "per_year", False):
        overrides["per_year"] = True
    if getattr(args, "bootstrap", False):
        overrides["se_method"] = "bootstrap"
    if getattr(args, "exact_on", None) == "industry":
        overrides["exact_on_industry"] = True
    if args.config:
        base = RunConfig.from_yaml_file(args.config)
        return base.with_overrides(**overrides)
    return RunConfig.validated({k: v for k, v in overrides.items() if v is not None})


# --- Commands ---


def cmd_simulate(args: argparse.Namespace) -> None:
    synth = preset(args.preset, seed=args.seed)
    if args.n_firms is not None:
        synth = synth.model_copy(update={"n_firms": args.n_firms})
    ds, truth = generate(synth, n_jobs=args.n_jobs)
    text = export_csv(ds, args.out)
    if args.out is None:
        sys.stdout.write(text)
    if args.truth:
        Path(args.truth).write_text(truth.to_json() + "\n", encoding="utf-8")


def cmd_describe(args: argparse.Namespace) -> None:
    _emit(PipelineRunner(_config(args)).describe(), args.out)


def cmd_balance(args: argparse.Namespace) -> None:
    _emit(PipelineRunner(_config(args)).balance(), args.out)


def cmd_propensity(args: argparse.Namespace) -> None:
    runner = PipelineRunner(_config(args))
    _emit(runner.propensity_frame(), args.out)
    if args.model:
        model = runner.scoring().model
        text = model.model_dump_json(indent=2) + "\n"
        Path(args.model).write_text(text, encoding="utf-8")


def cmd_match(args: argparse.Namespace) -> None:
    runner = PipelineRunner(_config(args))
    scored = runner.supported()
    if args.scheme == MatchScheme.REWEIGHT.value:
        weights = reweight(scored, normalize=runner.cfg.normalize_weights)
    else:
        exact_on = None
        if runner.cfg.exact_on_industry:
            exact_on = runner.dataset().industries().dropna().to_dict()
        weights = nn_match(scored, args.m, runner.cfg.distance_scale, exact_on)
    _emit(weights.to_frame(), args.out)


def cmd_att(args: argparse.Namespace) -> None:
    _emit(PipelineRunner(_config(args)).att().to_frame(), args.out)


def cmd_frontier(args: argparse.Namespace) -> None:
    runner = PipelineRunner(_config(args))
    _emit(frontier_table(runner.frontiers()), args.out)
    if args.scores:
        write_table(score_frame(runner.scores()), Path(args.scores))
    if args.series:
        series = median_distance_series(runner.scores(), runner.dataset())
        write_table(series, Path(args.series))
    if args.indexed:
        frame = indexed_median_series(
            runner.dataset(), base_year=runner.cfg.frontier_base_year
        )
        write_table(frame, Path(args.indexed))


def cmd_satt(args: argparse.Namespace) -> None:
    _emit(PipelineRunner(_config(args)).satt().to_frame(), args.out)


def cmd_run(args: argparse.Namespace) -> None:
    cfg = _config(args)
    bundle = PipelineRunner(cfg).run()
    if cfg.db_url:
        from sqlalchemy import create_engine
        from sqlalchemy.orm import Session

        from ets_effects.db_models import Base
        from ets_effects.store import ingest_bundle

        engine = create_engine(cfg.db_url)
        Base.metadata.create_all(engine)
        with Session(engine) as session:
            study = args.study or Path(cfg.output_dir).name
            snapshot = ingest_bundle(session, bundle, study)
            logger.info("Stored run as snapshot %d", snapshot.id)
    sys.stdout.write(bundle.to_json() + "\n")


# --- Parser ---


def _add_common(
    parser: argparse.ArgumentParser, out_help: str = "Output CSV (stdout if omitted)"
) -> None:
    parser.add_argument("--config", help="YAML run config")
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--input", help="Panel CSV")
    source.add_argument(
        "--preset", choices=sorted(PRESETS), help="Simulate a preset instead"
    )
    parser.add_argument("--n-firms", type=int, dest="n_firms")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--n-jobs", type=int, dest="n_jobs")
    parser.add_argument("--outcomes", nargs="+")
    parser.add_argument("--covariates", nargs="+", help="Propensity covariate tokens")
    parser.add_argument("--support", help="minmax, none or caliper:<radius>")
    parser.add_argument("--out", help=out_help)


def _add_exact_on(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--exact-on",
        choices=["industry"],
        dest="exact_on",
        help="Match only within the same stratum",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ets-effects",
        description="Emissions-trading effects: matching DiD and frontier efficiency.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Generate a synthetic panel")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-firms", type=int, dest="n_firms")
    p.add_argument("--n-jobs", type=int, dest="n_jobs", default=1)
    p.add_argument("--out", help="Panel CSV (stdout if omitted)")
    p.add_argument("--truth", help="Ground-truth JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("describe", help="Summary statistics")
    _add_common(p)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("balance", help="Pre-treatment level and trend tests")
    _add_common(p)
    _add_exact_on(p)
    p.add_argument("--neighbors", type=int, nargs="+")
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("propensity", help="Probit propensity scores")
    _add_common(p)
    p.add_argument("--model", help="Write the fitted probit as JSON")
    p.set_defaults(func=cmd_propensity)

    p = sub.add_parser("match", help="Counterfactual weights")
    _add_common(p)
    p.add_argument("--scheme", choices=MATCH_SCHEME_LIST, default=MatchScheme.NN.value)
    p.add_argument(
        "--neighbors", type=int, default=1, dest="m", help="Neighbours for nn"
    )
    _add_exact_on(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("att", help="ATT grid")
    _add_common(p)
    _add_exact_on(p)
    p.add_argument("--neighbors", type=int, nargs="+")
    p.add_argument("--pre-year", type=int, dest="pre_year")
    p.add_argument("--per-year", action="store_true", dest="per_year")
    p.add_argument(
        "--bootstrap", action="store_true", help="Bootstrap SEs for NN cells"
    )
    p.set_defaults(func=cmd_att)

    p = sub.add_parser("frontier", help="Per-industry frontiers and distances")
    _add_common(p, out_help="Coefficient table CSV (stdout if omitted)")
    p.add_argument("--inefficiency", choices=INEFFICIENCY_LIST)
    p.add_argument("--scores", help="Firm-year distance CSV")
    p.add_argument("--series", help="Median distance series CSV")
    p.add_argument("--indexed", help="Indexed medians CSV")
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("satt", help="Distance-to-frontier SATT table")
    _add_common(p)
    _add_exact_on(p)
    p.add_argument(
        "--industry", type=int, help="Restrict treated firms to one industry"
    )
    p.set_defaults(func=cmd_satt)

    p = sub.add_parser("run", help="Full pipeline into a report bundle")
    _add_common(p)
    _add_exact_on(p)
    p.add_argument("--out-dir", dest="out_dir", help="Bundle directory")
    p.add_argument("--db", help="SQLAlchemy URL to store results")
    p.add_argument("--study", help="Study name in the results store")
    p.set_defaults(func=cmd_run)
    return parser


def _report(payload: dict) -> None:
    sys.stderr.write(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    try:
        args.func(args)
    except EtsEffectsError as exc:
        _report(exc.to_dict())
        return int(exc.exit_code)
    except Exception as exc:
        logger.debug("Unhandled failure", exc_info=True)
        _report(
            {
                "error": type(exc).__name__,
                "category": "failure",
                "exit_code": int(ExitCode.FAILURE),
                "message": str(exc),
                "details": {},
            }
        )
        return int(ExitCode.FAILURE)
    return int(ExitCode.OK)


if __name__ == "__main__":
    sys.exit(main())
