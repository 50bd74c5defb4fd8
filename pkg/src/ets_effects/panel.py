"""
Panel ingestion, export and derived variables.

CSV rules: UTF-8, comma separated, header row, empty cell = missing,
``.`` as decimal separator. Floats are written as the shortest decimal
string that reads back to the same double, so export followed by
ingestion reproduces a dataset exactly.
"""

import io
import logging
import math
from pathlib import Path
from typing import BinaryIO, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ets_effects.constants import (
    DERIVED_COLUMNS,
    ENERGY_COMPONENTS,
    ENERGY_SUM_TOLERANCE,
    GRAMS_PER_TONNE,
    LOG_VARIABLES,
    MANDATORY_COLUMNS,
    NUMERIC_COLUMNS,
    PANEL_COLUMNS,
)
from ets_effects.errors import DataError, MissingColumnError, UnknownVariableError
from ets_effects.panel_models import (
    ColumnSchema,
    IngestionIssue,
    IngestionReport,
    PanelDataset,
    PhaseWindow,
    PhaseWindows,
)

logger = logging.getLogger(__name__)

Source = Union[bytes, BinaryIO, str, Path]


def _read_raw(source: Source) -> pd.DataFrame:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as handle:
            data = handle.read()
    elif isinstance(source, bytes):
        data = source
    else:
        data = source.read()
    text = data.decode("utf-8-sig")
    return pd.read_csv(
        io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=False
    )


def _parse_floats(values: pd.Series) -> Tuple[np.ndarray, List[int]]:
    """Parse decimal text; returns values and positions that failed."""
    out = np.full(len(values), np.nan)
    bad: List[int] = []
    for i, text in enumerate(values.to_numpy()):
        text = text.strip()
        if not text:
            continue
        try:
            x = float(text)
        except ValueError:
            bad.append(i)
            continue
        if not math.isfinite(x):
            bad.append(i)
            continue
        out[i] = x
    return out, bad


def _parse_ints(values: pd.Series) -> Tuple[pd.Series, List[int]]:
    floats, bad = _parse_floats(values)
    for i, x in enumerate(floats):
        if not np.isnan(x) and x != int(x):
            bad.append(i)
            floats[i] = np.nan
    for i in bad:
        floats[i] = np.nan
    return pd.Series(floats, index=values.index).astype("Int64"), sorted(set(bad))


def ingest_csv(
    source: Source,
    schema: Optional[ColumnSchema] = None,
    windows: Optional[PhaseWindows] = None,
) -> PanelDataset:
    """
    Read a long-format panel CSV.

    Arguments:
        source: File path, raw bytes or a binary stream.
        schema: Canonical-to-header column mapping; identity by default.
        windows: Panel span and phase windows.
    Returns:
        PanelDataset whose report lists every cell set to missing and every
        row dropped (outside the panel years).
    Raises:
        MissingColumnError: a mandatory column is absent.
        DataError: firm_id, year or treated cannot be parsed.
        DuplicateKeyError / TreatmentFlagError: panel invariants fail.
    """
    schema = schema or ColumnSchema()
    windows = windows or PhaseWindows()
    raw = _read_raw(source)

    for column in MANDATORY_COLUMNS:
        if schema.source(column) not in raw.columns:
            raise MissingColumnError(column)

    issues: List[IngestionIssue] = []
    frame = pd.DataFrame(index=raw.index)
    frame["firm_id"] = raw[schema.source("firm_id")].str.strip()
    empty_ids = frame.index[frame["firm_id"] == ""].tolist()
    if empty_ids:
        raise DataError(
            "Empty firm_id", rows=[int(i) + 2 for i in empty_ids[:20]]
        )

    for key in ("year", "treated"):
        parsed, bad = _parse_ints(raw[schema.source(key)])
        missing = parsed.isna()
        if bad or missing.any():
            rows = sorted(set(bad) | set(np.flatnonzero(missing.to_numpy()).tolist()))
            raise DataError(
                f"Column '{key}' has unparseable or empty values",
                column=key,
                rows=[int(i) + 2 for i in rows[:20]],
            )
        frame[key] = parsed.astype("int64")

    if schema.source("industry") in raw.columns:
        industry, bad = _parse_ints(raw[schema.source("industry")])
        for i in bad:
            issues.append(
                IngestionIssue(
                    row=i + 2,
                    firm_id=frame.at[i, "firm_id"],
                    year=int(frame.at[i, "year"]),
                    column="industry",
                    raw=raw.at[i, schema.source("industry")],
                    reason="unparseable",
                )
            )
        frame["industry"] = industry
    else:
        frame["industry"] = pd.Series(pd.NA, index=raw.index, dtype="Int64")

    for column in NUMERIC_COLUMNS:
        header = schema.source(column)
        if header not in raw.columns:
            frame[column] = np.nan
            continue
        values, bad = _parse_floats(raw[header])
        for i in bad:
            issues.append(
                IngestionIssue(
                    row=i + 2,
                    firm_id=frame.at[i, "firm_id"],
                    year=int(frame.at[i, "year"]),
                    column=column,
                    raw=raw.at[i, header],
                    reason="unparseable",
                )
            )
        for i in np.flatnonzero(values < 0):
            issues.append(
                IngestionIssue(
                    row=int(i) + 2,
                    firm_id=frame.at[i, "firm_id"],
                    year=int(frame.at[i, "year"]),
                    column=column,
                    raw=raw.at[i, header],
                    reason="negative",
                )
            )
            values[i] = np.nan
        frame[column] = values

    parts = frame[ENERGY_COMPONENTS]
    complete = parts.notna().all(axis=1) & frame["energy_total"].notna()
    excess = complete & (
        parts.sum(axis=1) > frame["energy_total"] + ENERGY_SUM_TOLERANCE
    )
    for i in frame.index[excess]:
        issues.append(
            IngestionIssue(
                row=int(i) + 2,
                firm_id=frame.at[i, "firm_id"],
                year=int(frame.at[i, "year"]),
                column="energy_total",
                raw=str(frame.at[i, "energy_total"]),
                reason="energy components exceed total",
            )
        )
    frame.loc[excess, "energy_total"] = np.nan

    outside = ~frame["year"].between(windows.panel_start, windows.panel_end)
    for i in frame.index[outside]:
        issues.append(
            IngestionIssue(
                row=int(i) + 2,
                firm_id=frame.at[i, "firm_id"],
                year=int(frame.at[i, "year"]),
                reason="outside panel window",
            )
        )
    frame = frame[~outside]

    report = IngestionReport(issues=issues, dropped_rows=int(outside.sum()))
    if issues:
        logger.warning("Ingestion recorded %d issue(s)", len(issues))
    dataset = PanelDataset.from_frame(frame, windows=windows, report=report)
    logger.info(
        "Ingested %d observations for %d firms (%d treated)",
        len(dataset.frame),
        len(dataset.treatment),
        len(dataset.treated_ids()),
    )
    return dataset


def _format_float(x: float) -> str:
    return "" if pd.isna(x) else repr(float(x))


def export_csv(ds: PanelDataset, target: Optional[Union[str, Path]] = None) -> str:
    """
    Write the canonical columns of a panel as CSV text.

    Derived columns are not exported; re-run ``derive_variables`` after
    ingestion. Returns the CSV text and writes it to ``target`` if given.
    """
    frame = ds.frame[PANEL_COLUMNS]
    out = pd.DataFrame(
        {
            "firm_id": frame["firm_id"],
            "year": frame["year"].astype(str),
            "industry": frame["industry"].map(lambda v: "" if pd.isna(v) else str(v)),
            "treated": frame["treated"].astype(str),
        }
    )
    for column in NUMERIC_COLUMNS:
        out[column] = frame[column].map(_format_float)
    text = out.to_csv(index=False, lineterminator="\n")
    if target is not None:
        Path(target).write_text(text, encoding="utf-8")
    return text


def log_difference(value: Optional[float], base: Optional[float]) -> Optional[float]:
    """ln(value) - ln(base); None unless both are strictly positive."""
    if value is None or base is None or value <= 0 or base <= 0:
        return None
    return math.log(value) - math.log(base)


def _drop_derived(frame: pd.DataFrame) -> pd.DataFrame:
    derived = [
        c
        for c in frame.columns
        if c in DERIVED_COLUMNS or c.startswith("ln_") or c.startswith("dln_")
    ]
    return frame.drop(columns=derived)


def derive_variables(ds: PanelDataset, base_year: int) -> PanelDataset:
    """
    Add intensity, export share, log levels and log changes vs ``base_year``.

    New columns: ``co2_intensity`` (g CO2 per kEUR of output),
    ``export_share``, and ``ln_<v>`` / ``dln_<v>`` for every variable in
    ``LOG_VARIABLES``. Logs of nonpositive or missing values stay missing;
    counts of such cells are added to the report. Recomputes from the raw
    columns, so applying it twice gives the same result.
    """
    frame = _drop_derived(ds.frame).copy()
    issues: List[IngestionIssue] = []

    output = frame["output"]
    positive_output = output > 0
    safe_output = output.where(positive_output)
    frame["co2_intensity"] = np.where(
        positive_output, frame["co2"] * GRAMS_PER_TONNE / safe_output, np.nan
    )
    share = np.where(positive_output, frame["exports"] / safe_output, np.nan)
    above_one = share > 1
    if above_one.any():
        issues.append(
            IngestionIssue(
                column="export_share",
                reason="exports exceed output",
                count=int(above_one.sum()),
            )
        )
        share = np.where(above_one, np.nan, share)
    frame["export_share"] = share

    base_rows = frame["year"] == base_year
    base_firms = set(frame.loc[base_rows, "firm_id"])
    firms_without_base = sorted(set(frame["firm_id"]) - base_firms)
    if firms_without_base:
        issues.append(
            IngestionIssue(
                year=base_year,
                reason="base year missing",
                count=len(firms_without_base),
            )
        )

    for variable in LOG_VARIABLES:
        values = frame[variable]
        nonpositive = values.notna() & (values <= 0)
        if nonpositive.any():
            issues.append(
                IngestionIssue(
                    column=variable,
                    reason="nonpositive log argument",
                    count=int(nonpositive.sum()),
                )
            )
        logs = np.log(values.where(values > 0))
        frame[f"ln_{variable}"] = logs
        base = pd.Series(
            logs[base_rows].to_numpy(), index=frame.loc[base_rows, "firm_id"]
        )
        frame[f"dln_{variable}"] = logs - frame["firm_id"].map(base)

    report = ds.report.extended(issues)
    return ds.with_frame(frame, report=report, base_year=base_year)


def log_series(ds: PanelDataset, variable: str) -> pd.Series:
    """Per-row natural log of ``variable`` (uses ``ln_<variable>`` if derived)."""
    if ds.has_column(f"ln_{variable}"):
        return ds.frame[f"ln_{variable}"]
    if variable in DERIVED_COLUMNS and not ds.has_column(variable):
        raise UnknownVariableError(
            variable, [c for c in ds.frame.columns if not c.startswith("dln_")]
        )
    values = ds.column(variable)
    return np.log(values.where(values > 0))


def phase_mean_outcome(
    ds: PanelDataset, firm_id: str, outcome: str, window: PhaseWindow
) -> Optional[float]:
    """
    Mean of ``outcome`` over the firm's available years in ``window``.

    Missing years are skipped; returns None if no year is available.
    """
    values = ds.column(outcome)
    mask = (ds.frame["firm_id"] == firm_id) & ds.frame["year"].between(
        window.start, window.end
    )
    available = values[mask].dropna()
    if available.empty:
        return None
    return float(available.mean())


def phase_means(ds: PanelDataset, values: pd.Series, window: PhaseWindow) -> pd.Series:
    """Vectorized ``phase_mean_outcome`` over all firms for a row-aligned series."""
    mask = ds.frame["year"].between(window.start, window.end)
    means = values[mask].groupby(ds.frame.loc[mask, "firm_id"]).mean()
    return means.reindex(ds.firm_ids())


def year_values(ds: PanelDataset, values: pd.Series, year: int) -> pd.Series:
    mask = ds.frame["year"] == year
    return pd.Series(
        values[mask].to_numpy(), index=ds.frame.loc[mask, "firm_id"]
    ).reindex(ds.firm_ids())


def window_change(
    ds: PanelDataset, values: pd.Series, pre_year: int, window: PhaseWindow
) -> pd.Series:
    """Per firm: window mean of ``values`` minus its value in ``pre_year``."""
    return phase_means(ds, values, window) - year_values(ds, values, pre_year)


def log_change(
    ds: PanelDataset, variable: str, pre_year: int, window: PhaseWindow
) -> pd.Series:
    """Per firm: mean ln(variable) in ``window`` minus ln(variable) at ``pre_year``."""
    return window_change(ds, log_series(ds, variable), pre_year, window)


def stacked_log_changes(
    ds: PanelDataset, variable: str, pre_year: int, window: PhaseWindow
) -> pd.DataFrame:
    """Firm-year rows (firm_id, year, delta) of ln changes vs ``pre_year``."""
    logs = log_series(ds, variable)
    base = year_values(ds, logs, pre_year)
    mask = ds.frame["year"].between(window.start, window.end)
    rows = pd.DataFrame(
        {
            "firm_id": ds.frame.loc[mask, "firm_id"].to_numpy(),
            "year": ds.frame.loc[mask, "year"].to_numpy(),
            "delta": (logs[mask] - ds.frame.loc[mask, "firm_id"].map(base)).to_numpy(),
        }
    )
    return rows.dropna(subset=["delta"]).reset_index(drop=True)


__all__ = [
    "ingest_csv",
    "export_csv",
    "derive_variables",
    "log_difference",
    "log_series",
    "phase_mean_outcome",
    "phase_means",
    "year_values",
    "window_change",
    "log_change",
    "stacked_log_changes",
]
