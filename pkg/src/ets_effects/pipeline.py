"""
Pipeline orchestration and the report bundle.

``PipelineRunner`` computes each stage once and caches it, so the CLI
subcommands can ask for any single stage and ``run`` can compose them
all. ``run_pipeline`` writes the bundle; a stage failure keeps the files
already written, adds a ``FAILED`` marker holding the error JSON and
raises ``PipelineStageError``.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, TypeVar

import pandas as pd

from ets_effects import __version__
from ets_effects.att import AttGrid, att_table
from ets_effects.config import RunConfig
from ets_effects.constants import FAILED_MARKER, MatchScheme
from ets_effects.descstats import BalanceReport, balance_tests, summarize, summary_frame
from ets_effects.errors import EtsEffectsError, PipelineStageError
from ets_effects.frontier import (
    EfficiencyScore,
    FrontierFits,
    fit_frontiers,
    frontier_table,
    indexed_median_series,
    median_distance_series,
    panel_scores,
)
from ets_effects.matching import MatchWeights, nn_match, reweight
from ets_effects.panel import derive_variables, ingest_csv, log_series
from ets_effects.panel_models import PanelDataset, PhaseWindow, PhaseWindows
from ets_effects.propensity import (
    ScoredUnit,
    ScoringResult,
    build_covariates,
    enforce_common_support,
    parse_support,
    score_panel,
    scored_frame,
)
from ets_effects.satt import SattTable, satt_table
from ets_effects.synthgen import GroundTruth, generate, preset

logger = logging.getLogger(__name__)

T = TypeVar("T")


def file_sha256(file_path: Path) -> str:
    """
    Calculate the SHA256 hash of a file.
    Arguments:
        file_path (Path): The file path to calculate the hash for.
    Returns:
        str: The SHA256 hash as a hexadecimal string.
    """
    sha256_hash = hashlib.sha256()
    with file_path.open("rb") as f:
        for byte_block in iter(lambda: f.read(4096), b""):
            sha256_hash.update(byte_block)
    return sha256_hash.hexdigest()


def write_table(frame: pd.DataFrame, path: Path) -> Path:
    """CSV with shortest round-trip floats and empty cells for missing values."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


class ReportBundle:
    """Tables of a run, keyed by file name, plus the manifest."""

    def __init__(self):
        self.tables: Dict[str, pd.DataFrame] = {}
        self.manifest: Dict[str, object] = {}

    def add(self, name: str, frame: pd.DataFrame) -> None:
        self.tables[name] = frame

    def to_json(self) -> str:
        return json.dumps(self.manifest, indent=2, sort_keys=True)


class PipelineRunner:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.truth: Optional[GroundTruth] = None

        # Stage caches
        self._dataset: Optional[PanelDataset] = None
        self._scoring: Optional[ScoringResult] = None
        self._support: Optional[List[ScoredUnit]] = None
        self._weights: Optional[List[MatchWeights]] = None
        self._balance: Optional[List[Tuple[str, BalanceReport]]] = None
        self._att: Optional[AttGrid] = None
        self._fits: Optional[FrontierFits] = None
        self._scores: Optional[List[EfficiencyScore]] = None
        self._satt: Optional[SattTable] = None

    # --- Stages ---

    def dataset(self) -> PanelDataset:
        """Ingest (or simulate) and derive variables."""
        if self._dataset is None:
            cfg = self.cfg
            if cfg.input:
                raw = ingest_csv(cfg.input, schema=cfg.columns, windows=cfg.windows)
            else:
                synth = preset(cfg.preset, seed=cfg.seed)
                if cfg.n_firms is not None:
                    synth = synth.model_copy(update={"n_firms": cfg.n_firms})
                raw, self.truth = generate(synth, n_jobs=cfg.n_jobs)
                windows = cfg.windows.model_copy(
                    update={
                        "panel_start": raw.windows.panel_start,
                        "panel_end": raw.windows.panel_end,
                    }
                )
                raw = raw.model_copy(update={"windows": windows})
            ds = derive_variables(raw, base_year=cfg.covariate_year)
            for outcome in cfg.outcomes:
                log_series(ds, outcome)
            self._dataset = ds
        return self._dataset

    def scoring(self) -> ScoringResult:
        if self._scoring is None:
            cfg = self.cfg
            self._scoring = score_panel(
                self.dataset(), cfg.covariates, cfg.covariate_year, cfg.trend_years
            )
        return self._scoring

    def supported(self) -> List[ScoredUnit]:
        """Scored units on the common support."""
        if self._support is None:
            rule, caliper = parse_support(self.cfg.support)
            result = enforce_common_support(self.scoring().scored, rule, caliper)
            self._support = result.retained
        return self._support

    def _nn_sets(
        self, scored: List[ScoredUnit], neighbors: List[int]
    ) -> List[MatchWeights]:
        exact_on = None
        if self.cfg.exact_on_industry:
            exact_on = self.dataset().industries().dropna().to_dict()
        scale = self.cfg.distance_scale
        return [nn_match(scored, m, scale, exact_on) for m in neighbors]

    def weight_sets(self) -> List[MatchWeights]:
        """NN(1:m) for every configured m, then reweighting if enabled."""
        if self._weights is None:
            scored = self.supported()
            sets = self._nn_sets(scored, self.cfg.neighbors)
            if self.cfg.reweight:
                sets.append(reweight(scored, normalize=self.cfg.normalize_weights))
            self._weights = sets
        return self._weights

    def _first_nn(self) -> Optional[MatchWeights]:
        return next((w for w in self.weight_sets() if w.scheme is MatchScheme.NN), None)

    def describe(self) -> pd.DataFrame:
        cfg = self.cfg
        rows = summarize(
            self.dataset(),
            cfg.describe_variables,
            cfg.covariate_year,
            weights=self._first_nn(),
            disclosure_floor=cfg.disclosure_floor,
        )
        return summary_frame(rows)

    def balance(self) -> pd.DataFrame:
        """Level and trend tests before matching and for every weighting scheme."""
        if self._balance is None:
            cfg = self.cfg
            samples: List[Tuple[str, Optional[MatchWeights]]] = [("unmatched", None)]
            samples += [(w.label, w) for w in self.weight_sets()]
            self._balance = [
                (
                    label,
                    balance_tests(
                        self.dataset(),
                        weights,
                        cfg.outcomes,
                        level_year=cfg.covariate_year,
                        trend_years=cfg.trend_years,
                    ),
                )
                for label, weights in samples
            ]
        frames = [
            report.to_frame().assign(sample=label) for label, report in self._balance
        ]
        frame = pd.concat(frames, ignore_index=True)
        return frame[["sample"] + [c for c in frame.columns if c != "sample"]]

    def att_windows(self) -> List[PhaseWindow]:
        windows = self.cfg.windows.phases()
        if self.cfg.per_year:
            years = range(windows[0].start, windows[-1].end + 1)
            windows = windows + [PhaseWindow.single_year(y) for y in years]
        return windows

    def att(self) -> AttGrid:
        if self._att is None:
            cfg = self.cfg
            covariates = None
            if cfg.ols_covariates:
                covariates, _ = build_covariates(
                    self.dataset(),
                    cfg.ols_covariates,
                    cfg.covariate_year,
                    cfg.trend_years,
                )
            self._att = att_table(
                self.dataset(),
                cfg.outcomes,
                self.weight_sets(),
                self.att_windows(),
                pre_year=cfg.pre_year,
                covariates=covariates,
                pooling=cfg.pooling,
                se_method=cfg.se_method,
                n_boot=cfg.n_boot,
                seed=cfg.seed,
                n_jobs=cfg.n_jobs,
            )
        return self._att

    def frontiers(self) -> FrontierFits:
        if self._fits is None:
            cfg = self.cfg
            self._fits = fit_frontiers(
                self.dataset(),
                industries=cfg.industries,
                exclude=cfg.exclude_industries,
                n_jobs=cfg.n_jobs,
                law=cfg.inefficiency,
                years=cfg.frontier_years,
                min_obs=cfg.frontier_min_obs,
            )
        return self._fits

    def scores(self) -> List[EfficiencyScore]:
        if self._scores is None:
            self._scores = panel_scores(
                self.dataset(), self.frontiers(), self.cfg.frontier_years
            )
        return self._scores

    def satt(self) -> SattTable:
        """
        Distance SATT with weights matched once on pre-treatment
        ``satt_covariates`` and reused across years.
        """
        if self._satt is None:
            cfg = self.cfg
            ds = self.dataset()
            scoring = score_panel(
                ds, cfg.satt_covariates, cfg.frontier_base_year, cfg.trend_years
            )
            rule, caliper = parse_support(cfg.support)
            scored = enforce_common_support(scoring.scored, rule, caliper).retained
            windows = PhaseWindows.for_frontier()
            start, end = cfg.frontier_years
            self._satt = satt_table(
                self.scores(),
                ds,
                self._nn_sets(scored, cfg.satt_neighbors),
                years=range(start, end + 1),
                phases=windows.phases(),
                base_year=cfg.frontier_base_year,
                industry=cfg.satt_industry,
                n_jobs=cfg.n_jobs,
            )
        return self._satt

    # --- Bundle ---

    def _stage(self, name: str, fn: Callable[[], T]) -> T:
        try:
            logger.info("Stage %s", name)
            return fn()
        except EtsEffectsError as exc:
            raise PipelineStageError(name, exc) from exc

    def run(self, output_dir: Optional[Path] = None) -> ReportBundle:
        """
        Compute every stage and write the bundle to ``output_dir``.

        Raises:
            PipelineStageError: a stage failed; files written so far are
                kept next to a ``FAILED`` marker.
        """
        out = Path(output_dir or self.cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        marker = out / FAILED_MARKER
        if marker.exists():
            marker.unlink()
        bundle = ReportBundle()

        def emit(name: str, frame: pd.DataFrame) -> None:
            bundle.add(name, frame)
            write_table(frame, out / name)

        try:
            self._stage("ingest", self.dataset)
            self._stage("propensity", self.supported)
            self._stage("match", self.weight_sets)
            emit("table1.csv", self._stage("describe", self.describe))
            emit("table2.csv", self._stage("balance", self.balance))
            emit("att_grid.csv", self._stage("att", self.att).to_frame())
            if self.cfg.frontier:
                fits = self._stage("frontier", self.frontiers)
                emit("frontier_coeffs.csv", frontier_table(fits))
                scores = self._stage("frontier", self.scores)
                emit(
                    "distance_series.csv",
                    median_distance_series(scores, self.dataset()),
                )
                emit(
                    "indexed_medians.csv",
                    self._stage(
                        "frontier",
                        lambda: indexed_median_series(
                            self.dataset(), base_year=self.cfg.frontier_base_year
                        ),
                    ),
                )
                emit("satt_table.csv", self._stage("satt", self.satt).to_frame())
        except PipelineStageError as exc:
            marker.write_text(
                json.dumps(exc.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
            )
            logger.error(
                "Pipeline failed in stage %s: %s", exc.stage, exc.cause.message
            )
            raise

        bundle.manifest = self._manifest(out, bundle)
        manifest_path = out / "run_manifest.json"
        manifest_path.write_text(bundle.to_json() + "\n", encoding="utf-8")
        return bundle

    def _manifest(self, out: Path, bundle: ReportBundle) -> Dict[str, object]:
        ds = self.dataset()
        grid = self.att()
        return {
            "library": "ets-effects",
            "version": __version__,
            "seed": self.cfg.seed,
            "config": self.cfg.manifest_dict(),
            "files": {name: file_sha256(out / name) for name in sorted(bundle.tables)},
            "counts": {
                "firms": len(ds.treatment),
                "treated": len(ds.treated_ids()),
                "observations": len(ds.frame),
                "ingestion_issues": ds.report.issue_count,
                "on_support": len(self.supported()),
                "failed_att_cells": len(grid.failed),
            },
            "status": "ok",
        }

    def propensity_frame(self) -> pd.DataFrame:
        frame = scored_frame(self.scoring().scored)
        on_support = {u.firm_id for u in self.supported()}
        frame["on_support"] = frame["firm_id"].isin(on_support)
        return frame


def run_pipeline(cfg: RunConfig, output_dir: Optional[Path] = None) -> ReportBundle:
    """Run every stage of ``cfg`` and write the report bundle."""
    return PipelineRunner(cfg).run(output_dir)


__all__ = [
    "file_sha256",
    "write_table",
    "ReportBundle",
    "PipelineRunner",
    "run_pipeline",
]
