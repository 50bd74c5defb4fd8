"""
ATT estimators.

``did_matching_att`` evaluates the conditional difference-in-differences
matching estimator

    a = 1/N1 * sum_i [ (Y_i,t - Y_i,t') - sum_k W(i, k) (Y_k,t - Y_k,t') ]

with Y in logs and Y_t the mean over the window's available years.
``reweighted_ols_att`` regresses the same change on a constant, the
treatment dummy and optional covariates by weighted least squares, with
treated weight 1 and control weight p / (1 - p).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from ets_effects.constants import (
    ATT_STARS,
    BOOTSTRAP_REPS,
    DEFAULT_PRE_YEAR,
    MatchScheme,
    Pooling,
    SeMethod,
)
from ets_effects.errors import (
    ConfigError,
    EtsEffectsError,
    InsufficientDataError,
    UnknownFirmError,
)
from ets_effects.inference import normal_p_value, significance_stars, wls
from ets_effects.matching import MatchWeights
from ets_effects.panel import log_change, log_series, stacked_log_changes
from ets_effects.panel_models import PanelDataset, PhaseWindow

logger = logging.getLogger(__name__)


class AttEstimate(BaseModel):
    """
    One ATT cell.

    Attributes:
        outcome (str): Outcome variable, in logs.
        window (str): ``PhaseI``, ``PhaseII`` or a year.
        estimator (str): ``NN(1:m)`` or ``OLS-w/R``.
        estimate (float): ATT in log points.
        se (float): Standard error.
        p_value (Optional[float]): Two-sided normal p-value.
        stars (str): Significance marker.
        n_treated (int): Treated units contributing.
        n_controls (int): Controls with positive weight.
        n_dropped (int): Treated units dropped for an undefined change.
        se_method (str): ``sandwich``, ``bootstrap`` or ``cluster``.
    """

    outcome: str
    window: str
    estimator: str
    estimate: float
    se: float
    p_value: Optional[float] = None
    stars: str = ""
    n_treated: int
    n_controls: int
    n_dropped: int = 0
    se_method: str = SeMethod.SANDWICH.value

    @model_validator(mode="after")
    def _nonnegative_se(self) -> "AttEstimate":
        if self.se < 0:
            raise ValueError("standard error must be nonnegative")
        return self

    @property
    def t_stat(self) -> Optional[float]:
        return self.estimate / self.se if self.se > 0 else None


class ContrastSet(BaseModel):
    """Per treated unit: own change, counterfactual change and their difference."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    treated_ids: List[str]
    deltas: np.ndarray
    counterfactuals: np.ndarray
    control_totals: Dict[str, float]
    control_deltas: Dict[str, float]
    dropped: List[str]

    @property
    def contrasts(self) -> np.ndarray:
        return self.deltas - self.counterfactuals

    @property
    def estimate(self) -> float:
        return float(np.mean(self.contrasts))


def check_firms(ds: PanelDataset, weights: MatchWeights) -> None:
    unknown = sorted(set(weights.referenced_firms()) - set(ds.treatment))
    if unknown:
        raise UnknownFirmError(unknown)


def _weighted_counterfactual(
    weights: Dict[str, float], deltas: pd.Series
) -> Optional[Tuple[float, Dict[str, float]]]:
    """Counterfactual change over controls with a defined change, renormalized."""
    usable: Dict[str, float] = {}
    for k in sorted(weights):
        w = weights[k]
        d = deltas.get(k, np.nan)
        if w > 0 and not pd.isna(d):
            usable[k] = w
    total = sum(usable.values())
    if total <= 0:
        return None
    normalized = {k: w / total for k, w in usable.items()}
    return sum(normalized[k] * float(deltas[k]) for k in normalized), normalized


def matched_contrasts(deltas: pd.Series, weights: MatchWeights) -> ContrastSet:
    """
    Match each treated change against its weighted control changes.

    Controls with an undefined change are left out and the unit's
    remaining weights renormalized; a treated unit whose own change or
    every control change is undefined is dropped.
    Raises:
        InsufficientDataError: no treated unit contributes.
    """
    shared = None
    if weights.scheme is MatchScheme.REWEIGHT:
        shared = _weighted_counterfactual(weights.counterfactual(""), deltas)
    grouped = weights.by_treated()

    kept: List[str] = []
    own: List[float] = []
    counterfactuals: List[float] = []
    totals: Dict[str, float] = {}
    dropped: List[str] = []
    for i in sorted(weights.treated_ids):
        d_i = deltas.get(i, np.nan)
        if weights.scheme is MatchScheme.REWEIGHT:
            found = shared
        else:
            found = _weighted_counterfactual(
                {p.control_id: p.weight for p in grouped.get(i, [])}, deltas
            )
        if pd.isna(d_i) or found is None:
            dropped.append(i)
            continue
        cf, normalized = found
        kept.append(i)
        own.append(float(d_i))
        counterfactuals.append(cf)
        for k, w in normalized.items():
            totals[k] = totals.get(k, 0.0) + w
    if not kept:
        raise InsufficientDataError(
            "No treated unit has a defined change", dropped=len(dropped)
        )
    if dropped:
        logger.debug("%d treated unit(s) dropped for undefined changes", len(dropped))
    return ContrastSet(
        treated_ids=kept,
        deltas=np.array(own),
        counterfactuals=np.array(counterfactuals),
        control_totals=dict(sorted(totals.items())),
        control_deltas={k: float(deltas[k]) for k in sorted(totals)},
        dropped=dropped,
    )


def contrast_se(contrasts: ContrastSet) -> float:
    """
    Sandwich SE of the matched contrast.

    Regresses the changes of treated units (weight 1) and of used controls
    (aggregate matching weight) on a constant and the treatment dummy; the
    dummy coefficient equals the matching estimate. Errors are clustered
    by firm.
    """
    controls = list(contrasts.control_totals)
    y = np.concatenate(
        [contrasts.deltas, [contrasts.control_deltas[k] for k in controls]]
    )
    d = np.concatenate([np.ones(len(contrasts.deltas)), np.zeros(len(controls))])
    w = np.concatenate(
        [
            np.ones(len(contrasts.deltas)),
            [contrasts.control_totals[k] for k in controls],
        ]
    )
    firms = np.array(contrasts.treated_ids + controls)
    if len(y) < 3:
        return 0.0
    X = np.column_stack([np.ones_like(d), d])
    fit = wls(X, y, weights=w, names=["const", "treated"], clusters=firms)
    return fit.se("treated")


def bootstrap_se(
    contrasts: ContrastSet, n_boot: int = BOOTSTRAP_REPS, seed: int = 0
) -> float:
    """SE from resampling treated units together with their matched sets."""
    values = contrasts.contrasts
    if len(values) < 2:
        return 0.0
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, len(values), size=(n_boot, len(values)))
    return float(values[draws].mean(axis=1).std(ddof=1))


def _finish(
    outcome: str,
    window: PhaseWindow,
    estimator: str,
    estimate: float,
    se: float,
    n_treated: int,
    n_controls: int,
    n_dropped: int,
    se_method: str,
    stars: Sequence[Tuple[float, str]],
) -> AttEstimate:
    p = normal_p_value(estimate, se)
    return AttEstimate(
        outcome=outcome,
        window=window.label,
        estimator=estimator,
        estimate=estimate,
        se=se,
        p_value=p,
        stars=significance_stars(p, stars),
        n_treated=n_treated,
        n_controls=n_controls,
        n_dropped=n_dropped,
        se_method=se_method,
    )


def did_matching_att(
    ds: PanelDataset,
    weights: MatchWeights,
    outcome: str,
    pre_year: int = DEFAULT_PRE_YEAR,
    window: Optional[PhaseWindow] = None,
    se_method: SeMethod = SeMethod.SANDWICH,
    n_boot: int = BOOTSTRAP_REPS,
    seed: int = 0,
    stars: Sequence[Tuple[float, str]] = ATT_STARS,
) -> AttEstimate:
    """
    Conditional DiD matching ATT of ln ``outcome``.

    The change of each firm is its mean ln outcome over ``window`` minus
    ln outcome at ``pre_year``. Reweighting weights are used as one
    counterfactual shared by every treated unit.
    Raises:
        UnknownFirmError: the weights name firms not in the panel.
        InsufficientDataError: no treated unit contributes.
    """
    window = window or ds.windows.phase1
    se_method = SeMethod(se_method)
    check_firms(ds, weights)
    deltas = log_change(ds, outcome, pre_year, window)
    contrasts = matched_contrasts(deltas, weights)
    if se_method is SeMethod.BOOTSTRAP:
        se = bootstrap_se(contrasts, n_boot=n_boot, seed=seed)
    else:
        se = contrast_se(contrasts)
    return _finish(
        outcome,
        window,
        weights.label,
        contrasts.estimate,
        se,
        len(contrasts.treated_ids),
        len(contrasts.control_totals),
        len(contrasts.dropped),
        se_method.value,
        stars,
    )


def _design(
    firm_ids: Sequence[str],
    treated: set,
    covariates: Optional[pd.DataFrame],
) -> Tuple[np.ndarray, List[str], np.ndarray]:
    d = np.array([1.0 if f in treated else 0.0 for f in firm_ids])
    columns = [np.ones(len(firm_ids)), d]
    names = ["const", "treated"]
    ok = np.ones(len(firm_ids), dtype=bool)
    if covariates is not None and len(covariates.columns):
        block = covariates.reindex(list(firm_ids)).to_numpy(dtype=float)
        ok &= ~np.isnan(block).any(axis=1)
        columns.extend(block.T)
        names.extend(str(c) for c in covariates.columns)
    return np.column_stack(columns), names, ok


def reweighted_ols_att(
    ds: PanelDataset,
    weights: MatchWeights,
    outcome: str,
    covariates: Optional[pd.DataFrame] = None,
    pre_year: int = DEFAULT_PRE_YEAR,
    window: Optional[PhaseWindow] = None,
    pooling: Pooling = Pooling.PHASE_MEAN,
    stars: Sequence[Tuple[float, str]] = ATT_STARS,
) -> AttEstimate:
    """
    Reweighted OLS DiD: ``dy = c + a * D + x'b + e`` by WLS.

    Arguments:
        covariates: Firm-level regressors indexed by firm_id.
        pooling: ``phase_mean`` (one row per firm, HC1 errors) or
            ``stacked`` (one row per firm-year in the window, errors
            clustered by firm).
    Raises:
        ConfigError: the weights are not reweighting weights.
        RankDeficiencyError: the weighted design is rank deficient.
        NegativeWeightError: a control weight is negative.
    """
    if weights.scheme is not MatchScheme.REWEIGHT:
        raise ConfigError(
            "reweighted OLS needs reweighting weights", scheme=weights.scheme.value
        )
    window = window or ds.windows.phase1
    pooling = Pooling(pooling)
    check_firms(ds, weights)

    treated = set(weights.treated_ids)
    unit_weight = {t: 1.0 for t in weights.treated_ids}
    unit_weight.update(weights.control_weights)

    if pooling is Pooling.STACKED:
        rows = stacked_log_changes(ds, outcome, pre_year, window)
        rows = rows[rows["firm_id"].isin(unit_weight)]
        firm_ids = rows["firm_id"].tolist()
        y = rows["delta"].to_numpy(dtype=float)
    else:
        deltas = log_change(ds, outcome, pre_year, window)
        deltas = deltas.reindex(sorted(unit_weight)).dropna()
        firm_ids = deltas.index.tolist()
        y = deltas.to_numpy(dtype=float)

    X, names, ok = _design(firm_ids, treated, covariates)
    firms = np.array(firm_ids)[ok]
    X, y = X[ok], y[ok]
    w = np.array([unit_weight[f] for f in firms], dtype=float)
    if not (X[:, 1] == 1).any():
        raise InsufficientDataError(
            "No treated unit has a defined change", outcome=outcome
        )
    if not (X[:, 1] == 0).any():
        raise InsufficientDataError(
            "No control unit has a defined change", outcome=outcome
        )

    clustered = pooling is Pooling.STACKED and len(window.years) > 1
    fit = wls(X, y, weights=w, names=names, clusters=firms if clustered else None)
    used = set(firms)
    n_treated = len(used & treated)
    n_controls = len(used - treated)
    return _finish(
        outcome,
        window,
        weights.label,
        fit.coef("treated"),
        fit.se("treated"),
        n_treated,
        n_controls,
        len(treated) - n_treated,
        "cluster" if clustered else SeMethod.SANDWICH.value,
        stars,
    )


# --- Grid ---


class AttCell(BaseModel):
    outcome: str
    window: str
    estimator: str
    result: Optional[AttEstimate] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.result is None


GRID_COLUMNS = [
    "outcome",
    "window",
    "estimator",
    "estimate",
    "se",
    "p_value",
    "stars",
    "n_treated",
    "n_controls",
    "n_dropped",
    "se_method",
    "status",
    "error",
]


class AttGrid(BaseModel):
    """Outcome x window x estimator grid in request order."""

    cells: List[AttCell]

    def get(self, outcome: str, window: str, estimator: str) -> AttCell:
        for cell in self.cells:
            key = (cell.outcome, cell.window, cell.estimator)
            if key == (outcome, window, estimator):
                return cell
        raise KeyError((outcome, window, estimator))

    @property
    def failed(self) -> List[AttCell]:
        return [cell for cell in self.cells if cell.failed]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for cell in self.cells:
            row = {
                "outcome": cell.outcome,
                "window": cell.window,
                "estimator": cell.estimator,
            }
            if cell.result is not None:
                keys = {"outcome", "window", "estimator"}
                row.update(cell.result.model_dump(exclude=keys))
                row["status"] = "ok"
            else:
                row.update(status="failed", error=cell.error)
            rows.append(row)
        return pd.DataFrame(rows, columns=GRID_COLUMNS)


def att_table(
    ds: PanelDataset,
    outcomes: Sequence[str],
    weight_sets: Sequence[MatchWeights],
    windows: Sequence[PhaseWindow],
    pre_year: int = DEFAULT_PRE_YEAR,
    covariates: Optional[pd.DataFrame] = None,
    pooling: Pooling = Pooling.PHASE_MEAN,
    se_method: SeMethod = SeMethod.SANDWICH,
    n_boot: int = BOOTSTRAP_REPS,
    seed: int = 0,
    stars: Sequence[Tuple[float, str]] = ATT_STARS,
    n_jobs: int = 1,
) -> AttGrid:
    """
    Evaluate every outcome x window x weighting scheme cell.

    NN weights go through ``did_matching_att``, reweighting weights through
    ``reweighted_ols_att``. A cell that raises a package error is recorded
    as failed and the rest of the grid is still computed.
    """
    for outcome in outcomes:
        log_series(ds, outcome)
    requests = [
        (outcome, window, weights)
        for outcome in outcomes
        for window in windows
        for weights in weight_sets
    ]

    def run(request: Tuple[str, PhaseWindow, MatchWeights]) -> AttCell:
        outcome, window, weights = request
        cell = AttCell(outcome=outcome, window=window.label, estimator=weights.label)
        try:
            if weights.scheme is MatchScheme.REWEIGHT:
                result = reweighted_ols_att(
                    ds, weights, outcome, covariates, pre_year, window, pooling, stars
                )
            else:
                result = did_matching_att(
                    ds,
                    weights,
                    outcome,
                    pre_year,
                    window,
                    se_method,
                    n_boot,
                    seed,
                    stars,
                )
        except EtsEffectsError as exc:
            logger.warning(
                "ATT cell %s/%s/%s failed: %s",
                outcome,
                window.label,
                weights.label,
                exc.message,
            )
            cell.error = f"{type(exc).__name__}: {exc.message}"
            return cell
        cell.result = result
        return cell

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            cells = list(pool.map(run, requests))
    else:
        cells = [run(request) for request in requests]
    failed = sum(c.failed for c in cells)
    logger.info("ATT grid: %d cell(s), %d failed", len(cells), failed)
    return AttGrid(cells=cells)


__all__ = [
    "AttEstimate",
    "ContrastSet",
    "check_firms",
    "matched_contrasts",
    "contrast_se",
    "bootstrap_se",
    "did_matching_att",
    "reweighted_ols_att",
    "AttCell",
    "AttGrid",
    "att_table",
]
