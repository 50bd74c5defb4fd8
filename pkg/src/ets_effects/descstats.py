"""
Summary statistics and pre-treatment balance tests.

Percentiles use linear interpolation between order statistics (the
``linear`` / type-7 rule: position ``(n - 1) * q`` on the sorted sample).
Skewness is the moment estimator ``m3 / m2**1.5``; kurtosis is the
non-excess ``m4 / m2**2``. Balance tests are Welch two-sample t-tests of
treated means against (weighted) control means.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, model_validator
from scipy import stats

from ets_effects.constants import SummaryGroup
from ets_effects.errors import ConfigError, DataError, UnknownVariableError
from ets_effects.matching import MatchWeights
from ets_effects.panel import log_series, year_values
from ets_effects.panel_models import PanelDataset

logger = logging.getLogger(__name__)


class SummaryRow(BaseModel):
    """
    One (variable, group) line of a summary table.

    Statistics are None when N is below the disclosure floor or when a
    moment is undefined (e.g. skewness of a constant sample).
    """

    variable: str
    group: str
    year: int
    mean: Optional[float] = None
    sd: Optional[float] = None
    skewness: Optional[float] = None
    kurtosis: Optional[float] = None
    p10: Optional[float] = None
    p50: Optional[float] = None
    p90: Optional[float] = None
    n: int = 0

    @model_validator(mode="after")
    def _ordered(self) -> "SummaryRow":
        if None not in (self.p10, self.p50, self.p90):
            if not self.p10 <= self.p50 <= self.p90:
                raise ValueError("percentiles out of order")
        if self.sd is not None and self.sd < 0:
            raise ValueError("negative sd")
        return self


def describe_values(values: np.ndarray) -> Dict[str, Optional[float]]:
    """Moments and deciles of a 1-d sample with missing values removed."""
    x = np.asarray(values, dtype=float)
    x = x[~np.isnan(x)]
    n = len(x)
    out: Dict[str, Optional[float]] = {
        "mean": None,
        "sd": None,
        "skewness": None,
        "kurtosis": None,
        "p10": None,
        "p50": None,
        "p90": None,
    }
    if n == 0:
        return out
    out["mean"] = float(x.mean())
    p10, p50, p90 = np.percentile(x, [10, 50, 90], method="linear")
    out.update(p10=float(p10), p50=float(p50), p90=float(p90))
    if n >= 2:
        out["sd"] = float(x.std(ddof=1))
    if n >= 2 and np.ptp(x) > 0:
        out["skewness"] = float(stats.skew(x, bias=True))
        out["kurtosis"] = float(stats.kurtosis(x, fisher=False, bias=True))
    return out


def summarize(
    ds: PanelDataset,
    variables: Sequence[str],
    year: int,
    weights: Optional[MatchWeights] = None,
    disclosure_floor: int = 0,
) -> List[SummaryRow]:
    """
    Summary rows per variable for the full sample, treated and controls.

    With ``weights`` a ``matched-control`` group is added: the distinct
    controls that receive positive weight.
    Raises:
        UnknownVariableError: a variable is not a panel column.
        DataError: ``year`` is not in the panel.
    """
    for variable in variables:
        if not ds.has_column(variable):
            raise UnknownVariableError(variable, ds.frame.columns)
    if year not in ds.years():
        raise DataError(f"Year {year} not present in panel", year=year)

    at_year = ds.at_year(year)
    treated = at_year["treated"] == 1
    groups = [
        (SummaryGroup.FULL, pd.Series(True, index=at_year.index)),
        (SummaryGroup.TREATED, treated),
        (SummaryGroup.CONTROL, ~treated),
    ]
    if weights is not None:
        matched = set(weights.control_totals())
        groups.append(
            (SummaryGroup.MATCHED_CONTROL, at_year["firm_id"].isin(matched) & ~treated)
        )

    rows: List[SummaryRow] = []
    for variable in variables:
        for group, mask in groups:
            values = at_year.loc[mask, variable].to_numpy(dtype=float)
            n = int((~np.isnan(values)).sum())
            if n < disclosure_floor:
                rows.append(
                    SummaryRow(variable=variable, group=group.value, year=year, n=n)
                )
                continue
            rows.append(
                SummaryRow(
                    variable=variable,
                    group=group.value,
                    year=year,
                    n=n,
                    **describe_values(values),
                )
            )
    return rows


def summary_frame(rows: Sequence[SummaryRow]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows])


def trim_mid_quantile(
    ds: PanelDataset, variable: str, fraction: float
) -> Tuple[PanelDataset, int]:
    """
    Keep the central ``fraction`` of the distribution of ``variable``.

    Bounds are the ``(1 - fraction) / 2`` and ``1 - (1 - fraction) / 2``
    quantiles (linear rule); observations strictly outside are dropped,
    missing values are kept. Returns the new dataset and the drop count.
    """
    if not 0 < fraction <= 1:
        raise ConfigError("fraction must be in (0, 1]", fraction=fraction)
    values = ds.column(variable)
    present = values.dropna().to_numpy(dtype=float)
    if len(present) == 0 or fraction == 1:
        return ds, 0
    tail = (1 - fraction) / 2
    lo, hi = np.quantile(present, [tail, 1 - tail], method="linear")
    outside = values.notna() & ((values < lo) | (values > hi))
    dropped = int(outside.sum())
    logger.info(
        "Trimmed %d observation(s) of %s outside [%g, %g]", dropped, variable, lo, hi
    )
    return ds.with_frame(ds.frame[~outside]), dropped


# --- Balance ---


class WelchResult(BaseModel):
    statistic: Optional[float] = None
    p_value: Optional[float] = None
    df: Optional[float] = None
    n_treated: int = 0
    n_controls: int = 0
    reason: Optional[str] = None


def _weighted_mean_var(y: np.ndarray, w: np.ndarray) -> Tuple[float, float, float]:
    """Weighted mean, variance of that mean, and Kish effective size."""
    a = w / w.sum()
    mean = float(np.dot(a, y))
    n_eff = float(w.sum() ** 2 / np.dot(w, w))
    var_mean = float(n_eff / (n_eff - 1) * np.dot(a**2, (y - mean) ** 2))
    return mean, var_mean, n_eff


def welch_test(
    treated: np.ndarray,
    controls: np.ndarray,
    control_weights: Optional[np.ndarray] = None,
) -> WelchResult:
    """
    Two-sided Welch t-test of mean(treated) = weighted mean(controls).

    With unit weights the control variance is the usual s^2 / n; with
    other weights the variance of the weighted mean uses normalized
    weights and the Kish effective sample size for the degrees of freedom.
    """
    treated = np.asarray(treated, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if control_weights is None:
        w = np.ones_like(controls)
    else:
        w = np.asarray(control_weights, dtype=float)
    keep_t = ~np.isnan(treated)
    keep_c = ~np.isnan(controls) & (w > 0)
    treated, controls, w = treated[keep_t], controls[keep_c], w[keep_c]
    n1, n0 = len(treated), len(controls)
    if n1 < 2 or n0 < 2:
        return WelchResult(
            n_treated=n1, n_controls=n0, reason="fewer than 2 units in a group"
        )

    m1 = float(treated.mean())
    v1 = float(treated.var(ddof=1) / n1)
    m0, v0, n_eff = _weighted_mean_var(controls, w)
    if n_eff < 2:
        return WelchResult(
            n_treated=n1, n_controls=n0, reason="effective control size below 2"
        )
    diff = m1 - m0
    total = v1 + v0
    if total == 0:
        p = 1.0 if diff == 0 else 0.0
        return WelchResult(
            statistic=0.0 if diff == 0 else np.inf,
            p_value=p,
            n_treated=n1,
            n_controls=n0,
        )
    t = diff / np.sqrt(total)
    df = total**2 / (v1**2 / (n1 - 1) + v0**2 / (n_eff - 1))
    p = float(2 * stats.t.sf(abs(t), df))
    return WelchResult(
        statistic=float(t),
        p_value=min(max(p, 0.0), 1.0),
        df=float(df),
        n_treated=n1,
        n_controls=n0,
    )


class BalanceRow(BaseModel):
    outcome: str
    level_p: Optional[float] = None
    level_n_treated: int = 0
    level_n_controls: Optional[int] = None
    level_reason: Optional[str] = None
    trend_p: Optional[float] = None
    trend_n_treated: int = 0
    trend_n_controls: Optional[int] = None
    trend_reason: Optional[str] = None


class BalanceReport(BaseModel):
    """
    Pre-treatment equality tests for levels and trends.

    Attributes:
        rows (list[BalanceRow]): One per outcome.
        level_year (int): Year of the level comparison.
        trend_years (tuple[int, int]): Years of the log-difference trend.
        matched (bool): Whether control weights came from a matching scheme.
    """

    rows: List[BalanceRow]
    level_year: int
    trend_years: Tuple[int, int]
    matched: bool
    level_scale: str = "log"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.rows])


def balance_tests(
    ds: PanelDataset,
    weights: Optional[MatchWeights],
    outcomes: Sequence[str],
    level_year: int,
    trend_years: Tuple[int, int],
    level_scale: str = "log",
    suppress_control_counts: bool = False,
) -> BalanceReport:
    """
    Test equality of pre-treatment levels and trends, treated vs controls.

    Levels are compared at ``level_year`` (log levels by default,
    ``level_scale="raw"`` for raw levels); trends are ln differences
    between the two ``trend_years``. With ``weights`` the treated sample is
    the matched treated units and the controls carry their aggregate
    matching weight; without, all units enter with weight one.
    """
    y0, y1 = trend_years
    start = ds.windows.treatment_start
    if not (y0 < start and y1 < start and level_year < start):
        raise ConfigError(
            "Balance years must precede treatment start",
            trend_years=list(trend_years),
            level_year=level_year,
            treatment_start=start,
        )
    if level_scale not in ("log", "raw"):
        raise ConfigError(f"Unknown level scale '{level_scale}'")

    if weights is not None:
        treated_ids = list(weights.treated_ids)
        control_weights = weights.control_totals()
    else:
        treated_ids = ds.treated_ids()
        control_weights = {firm: 1.0 for firm in ds.control_ids()}
    control_ids = sorted(control_weights)
    w = np.array([control_weights[c] for c in control_ids], dtype=float)

    rows: List[BalanceRow] = []
    for outcome in outcomes:
        logs = log_series(ds, outcome)
        level_values = logs if level_scale == "log" else ds.column(outcome)
        level = year_values(ds, level_values, level_year)
        trend = year_values(ds, logs, y1) - year_values(ds, logs, y0)
        lv = welch_test(
            level.reindex(treated_ids).to_numpy(),
            level.reindex(control_ids).to_numpy(),
            w,
        )
        tr = welch_test(
            trend.reindex(treated_ids).to_numpy(),
            trend.reindex(control_ids).to_numpy(),
            w,
        )
        rows.append(
            BalanceRow(
                outcome=outcome,
                level_p=lv.p_value,
                level_n_treated=lv.n_treated,
                level_n_controls=None if suppress_control_counts else lv.n_controls,
                level_reason=lv.reason,
                trend_p=tr.p_value,
                trend_n_treated=tr.n_treated,
                trend_n_controls=None if suppress_control_counts else tr.n_controls,
                trend_reason=tr.reason,
            )
        )
    return BalanceReport(
        rows=rows,
        level_year=level_year,
        trend_years=(y0, y1),
        matched=weights is not None,
        level_scale=level_scale,
    )


__all__ = [
    "SummaryRow",
    "describe_values",
    "summarize",
    "summary_frame",
    "trim_mid_quantile",
    "WelchResult",
    "welch_test",
    "BalanceRow",
    "BalanceReport",
    "balance_tests",
]
