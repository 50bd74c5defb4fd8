"""
Treatment effects on the distance to the frontier.

The matched contrast of ``ets_effects.att`` applied to distance levels:
each firm's change is its distance in a year (or its mean distance over a
phase) minus its distance in the base year. A negative effect means
regulated firms moved closer to their frontier.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple, Union

import pandas as pd
from pydantic import BaseModel, model_validator

from ets_effects.att import check_firms, contrast_se, matched_contrasts
from ets_effects.constants import DEFAULT_FRONTIER_BASE_YEAR, SATT_STARS
from ets_effects.errors import DataError, EtsEffectsError, InsufficientDataError
from ets_effects.frontier import EfficiencyScore
from ets_effects.inference import normal_p_value, significance_stars
from ets_effects.matching import MatchWeights
from ets_effects.panel_models import PanelDataset, PhaseWindow

logger = logging.getLogger(__name__)


class SattEstimate(BaseModel):
    """
    One SATT cell.

    ``estimate`` is in log-output units; ``estimate_pct`` is the same
    number times 100.
    """

    window: str
    neighbors: Optional[int] = None
    industry: Optional[int] = None
    estimate: float
    se: float
    p_value: Optional[float] = None
    significant: bool = False
    stars: str = ""
    n_treated: int
    n_controls: int
    n_dropped: int = 0

    @model_validator(mode="after")
    def _nonnegative_se(self) -> "SattEstimate":
        if self.se < 0:
            raise ValueError("standard error must be nonnegative")
        return self

    @property
    def estimate_pct(self) -> float:
        return 100 * self.estimate

    @property
    def se_pct(self) -> float:
        return 100 * self.se


def distance_table(scores: Sequence[EfficiencyScore]) -> pd.DataFrame:
    """Firm x year table of distances; scores without a distance are missing."""
    frame = pd.DataFrame(
        [(s.firm_id, s.year, s.distance) for s in scores],
        columns=["firm_id", "year", "distance"],
    )
    table = frame.pivot(index="firm_id", columns="year", values="distance")
    return table.astype("float64")


def _changes(table: pd.DataFrame, years: Sequence[int], base_year: int) -> pd.Series:
    if base_year not in table.columns:
        raise DataError(f"No distances for base year {base_year}", year=base_year)
    present = [y for y in years if y in table.columns]
    if not present:
        raise DataError("No distances in the requested years", years=list(years))
    return table[present].mean(axis=1, skipna=True) - table[base_year]


def _restrict(
    ds: PanelDataset, weights: MatchWeights, industry: Optional[int]
) -> MatchWeights:
    if industry is None:
        return weights
    codes = ds.industries()
    keep = [t for t in weights.treated_ids if codes.get(t) == industry]
    if not keep:
        raise InsufficientDataError(
            f"No matched treated firm in industry {industry}", industry=industry
        )
    return weights.restricted(keep)


def _estimate(
    scores: Union[Sequence[EfficiencyScore], pd.DataFrame],
    ds: PanelDataset,
    weights: MatchWeights,
    window: PhaseWindow,
    base_year: int,
    industry: Optional[int],
    stars: Sequence[Tuple[float, str]],
) -> SattEstimate:
    check_firms(ds, weights)
    weights = _restrict(ds, weights, industry)
    table = scores if isinstance(scores, pd.DataFrame) else distance_table(scores)
    changes = _changes(table, window.years, base_year)
    contrasts = matched_contrasts(changes, weights)
    estimate = contrasts.estimate
    se = contrast_se(contrasts)
    p = normal_p_value(estimate, se)
    marker = significance_stars(p, stars)
    return SattEstimate(
        window=window.label,
        neighbors=weights.neighbors,
        industry=industry,
        estimate=estimate,
        se=se,
        p_value=p,
        significant=p is not None and p < 0.05,
        stars=marker,
        n_treated=len(contrasts.treated_ids),
        n_controls=len(contrasts.control_totals),
        n_dropped=len(contrasts.dropped),
    )


def satt_year(
    scores: Union[Sequence[EfficiencyScore], pd.DataFrame],
    ds: PanelDataset,
    weights: MatchWeights,
    year: int,
    base_year: int = DEFAULT_FRONTIER_BASE_YEAR,
    industry: Optional[int] = None,
    stars: Sequence[Tuple[float, str]] = SATT_STARS,
) -> SattEstimate:
    """
    SATT of the change in distance between ``base_year`` and ``year``.

    Raises:
        InsufficientDataError: no treated unit has both distances.
    """
    window = PhaseWindow.single_year(year)
    return _estimate(scores, ds, weights, window, base_year, industry, stars)


def satt_phase(
    scores: Union[Sequence[EfficiencyScore], pd.DataFrame],
    ds: PanelDataset,
    weights: MatchWeights,
    phase: PhaseWindow,
    base_year: int = DEFAULT_FRONTIER_BASE_YEAR,
    industry: Optional[int] = None,
    stars: Sequence[Tuple[float, str]] = SATT_STARS,
) -> SattEstimate:
    """SATT of the firm-level mean change in distance over ``phase``."""
    return _estimate(scores, ds, weights, phase, base_year, industry, stars)


def industry_subset_satt(
    scores: Union[Sequence[EfficiencyScore], pd.DataFrame],
    ds: PanelDataset,
    weights: MatchWeights,
    phase: PhaseWindow,
    industry: int,
    base_year: int = DEFAULT_FRONTIER_BASE_YEAR,
    stars: Sequence[Tuple[float, str]] = SATT_STARS,
) -> SattEstimate:
    """``satt_phase`` over the treated firms of one industry."""
    return _estimate(scores, ds, weights, phase, base_year, industry, stars)


class SattCell(BaseModel):
    window: str
    neighbors: Optional[int] = None
    industry: Optional[int] = None
    result: Optional[SattEstimate] = None
    error: Optional[str] = None


SATT_COLUMNS = [
    "window",
    "neighbors",
    "industry",
    "estimate",
    "se",
    "estimate_pct",
    "se_pct",
    "p_value",
    "significant",
    "stars",
    "n_treated",
    "n_controls",
    "n_dropped",
    "status",
    "error",
]


class SattTable(BaseModel):
    """Windows (years, then phases) x neighbour counts."""

    cells: List[SattCell]

    def get(
        self, window: str, neighbors: int, industry: Optional[int] = None
    ) -> SattCell:
        key = (window, neighbors, industry)
        for cell in self.cells:
            if (cell.window, cell.neighbors, cell.industry) == key:
                return cell
        raise KeyError((window, neighbors, industry))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for cell in self.cells:
            row = {
                "window": cell.window,
                "neighbors": cell.neighbors,
                "industry": cell.industry,
            }
            if cell.result is not None:
                keys = {"window", "neighbors", "industry"}
                row.update(cell.result.model_dump(exclude=keys))
                row.update(
                    estimate_pct=cell.result.estimate_pct,
                    se_pct=cell.result.se_pct,
                    status="ok",
                )
            else:
                row.update(status="failed", error=cell.error)
            rows.append(row)
        return pd.DataFrame(rows, columns=SATT_COLUMNS)

    def wide(self) -> pd.DataFrame:
        """Percent estimates, rows = windows, columns = neighbour counts."""
        frame = self.to_frame()
        order = list(dict.fromkeys(frame["window"]))
        table = frame.pivot_table(
            index="window", columns="neighbors", values="estimate_pct", aggfunc="first"
        )
        return table.reindex(order)


def satt_table(
    scores: Sequence[EfficiencyScore],
    ds: PanelDataset,
    weight_sets: Sequence[MatchWeights],
    years: Sequence[int],
    phases: Sequence[PhaseWindow],
    base_year: int = DEFAULT_FRONTIER_BASE_YEAR,
    industry: Optional[int] = None,
    stars: Sequence[Tuple[float, str]] = SATT_STARS,
    n_jobs: int = 1,
) -> SattTable:
    """
    Year-by-year and phase rows for every set of weights.

    Failed cells are recorded and do not stop the table.
    """
    table = distance_table(scores)
    windows = [PhaseWindow.single_year(y) for y in years if y != base_year]
    windows += list(phases)
    requests = [(window, weights) for window in windows for weights in weight_sets]

    def run(request: Tuple[PhaseWindow, MatchWeights]) -> SattCell:
        window, weights = request
        cell = SattCell(
            window=window.label, neighbors=weights.neighbors, industry=industry
        )
        try:
            cell.result = _estimate(
                table, ds, weights, window, base_year, industry, stars
            )
        except EtsEffectsError as exc:
            logger.warning(
                "SATT cell %s/%s failed: %s",
                window.label,
                weights.label,
                exc.message,
            )
            cell.error = f"{type(exc).__name__}: {exc.message}"
        return cell

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            cells = list(pool.map(run, requests))
    else:
        cells = [run(request) for request in requests]
    return SattTable(cells=cells)


__all__ = [
    "SattEstimate",
    "distance_table",
    "satt_year",
    "satt_phase",
    "industry_subset_satt",
    "SattCell",
    "SattTable",
    "satt_table",
]
