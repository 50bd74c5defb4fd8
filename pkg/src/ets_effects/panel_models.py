from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, computed_field, field_validator, model_validator

from ets_effects.constants import (
    DEFAULT_PANEL_YEARS,
    ENERGY_COMPONENTS,
    ENERGY_SUM_TOLERANCE,
    NUMERIC_COLUMNS,
    PANEL_COLUMNS,
    PhaseLabel,
)
from ets_effects.errors import (
    DataError,
    DuplicateKeyError,
    TreatmentFlagError,
    UnknownVariableError,
)


class FirmYear(BaseModel):
    """
    One firm-year observation.

    Attributes:
        firm_id (str): Opaque firm identifier.
        year (int): Calendar year.
        industry (Optional[int]): 2-digit NACE sector code.
        treated (int): Time-invariant ETS participation flag (0/1).
        output (Optional[float]): Gross output, kEUR.
        exports (Optional[float]): Exports, kEUR.
        employees (Optional[float]): Head count.
        avg_wage (Optional[float]): EUR per employee and year.
        capital (Optional[float]): Capital stock, kEUR.
        energy_total (Optional[float]): Total energy use, MWh.
        electricity, gas, oil, other_primary (Optional[float]): Energy by carrier, MWh.
        co2 (Optional[float]): Emissions, t CO2.

    ``None`` means missing; zero is a legal value.
    """

    firm_id: str
    year: int
    industry: Optional[int] = None
    treated: int
    output: Optional[float] = None
    exports: Optional[float] = None
    employees: Optional[float] = None
    avg_wage: Optional[float] = None
    capital: Optional[float] = None
    energy_total: Optional[float] = None
    electricity: Optional[float] = None
    gas: Optional[float] = None
    oil: Optional[float] = None
    other_primary: Optional[float] = None
    co2: Optional[float] = None

    @field_validator("treated")
    @classmethod
    def _binary_flag(cls, v: int) -> int:
        if v not in (0, 1):
            raise ValueError("treated must be 0 or 1")
        return v

    @field_validator(*NUMERIC_COLUMNS)
    @classmethod
    def _nonnegative(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v < 0:
            raise ValueError("must be >= 0")
        return v

    @model_validator(mode="after")
    def _energy_adds_up(self) -> "FirmYear":
        parts = [getattr(self, c) for c in ENERGY_COMPONENTS]
        if self.energy_total is not None and all(p is not None for p in parts):
            if sum(parts) > self.energy_total + ENERGY_SUM_TOLERANCE:
                raise ValueError("energy components exceed energy_total")
        return self


class PhaseWindow(BaseModel):
    """
    Inclusive range of calendar years with a label.

    Attributes:
        label (str): ``Pretreatment``, ``PhaseI``, ``PhaseII`` or a year.
        start (int): First year.
        end (int): Last year.
    """

    label: str
    start: int
    end: int

    @model_validator(mode="after")
    def _ordered(self) -> "PhaseWindow":
        if self.start > self.end:
            raise ValueError(
                f"window {self.label}: start {self.start} > end {self.end}"
            )
        return self

    @classmethod
    def single_year(cls, year: int) -> "PhaseWindow":
        return cls(label=str(year), start=year, end=year)

    @property
    def years(self) -> List[int]:
        return list(range(self.start, self.end + 1))

    def __contains__(self, year: int) -> bool:
        return self.start <= year <= self.end

    def to_yaml(self) -> str:
        """
        Serialize the window to a YAML string.
        """
        return yaml.dump(self.model_dump(), sort_keys=False)

    @classmethod
    def from_yaml(cls, yaml_str: str):
        """
        Deserialize a YAML string to a window.
        """
        return cls.model_validate(yaml.safe_load(yaml_str))


class PhaseWindows(BaseModel):
    """
    Pretreatment and trading-phase windows plus the overall panel span.

    Phase II ends in 2010 for the emissions ATT tables and in 2012 for the
    frontier analysis; use ``for_att`` / ``for_frontier``.
    """

    pretreatment: PhaseWindow = PhaseWindow(
        label=PhaseLabel.PRETREATMENT.value, start=2003, end=2004
    )
    phase1: PhaseWindow = PhaseWindow(
        label=PhaseLabel.PHASE_I.value, start=2005, end=2007
    )
    phase2: PhaseWindow = PhaseWindow(
        label=PhaseLabel.PHASE_II.value, start=2008, end=2010
    )
    panel_start: int = DEFAULT_PANEL_YEARS[0]
    panel_end: int = DEFAULT_PANEL_YEARS[1]

    @classmethod
    def for_att(cls) -> "PhaseWindows":
        return cls()

    @classmethod
    def for_frontier(cls) -> "PhaseWindows":
        return cls(
            phase2=PhaseWindow(label=PhaseLabel.PHASE_II.value, start=2008, end=2012)
        )

    @property
    def treatment_start(self) -> int:
        return self.phase1.start

    def phases(self) -> List[PhaseWindow]:
        return [self.phase1, self.phase2]

    def by_label(self, label: str) -> PhaseWindow:
        for window in (self.pretreatment, self.phase1, self.phase2):
            if window.label == label:
                return window
        if label.isdigit():
            return PhaseWindow.single_year(int(label))
        raise ValueError(f"Unknown window label '{label}'")

    def phase_of(self, year: int) -> Optional[str]:
        for window in self.phases():
            if year in window:
                return window.label
        return None


class ColumnSchema(BaseModel):
    """
    Maps canonical column names to the headers found in a CSV file.

    Columns not listed are expected under their canonical name.
    """

    mapping: Dict[str, str] = {}

    def source(self, canonical: str) -> str:
        return self.mapping.get(canonical, canonical)


class IngestionIssue(BaseModel):
    """A cell or row that did not survive ingestion or derivation as given."""

    row: Optional[int] = None
    firm_id: Optional[str] = None
    year: Optional[int] = None
    column: Optional[str] = None
    raw: Optional[str] = None
    reason: str
    count: int = 1


class IngestionReport(BaseModel):
    """
    Collected issues from ingestion and variable derivation.

    Attributes:
        issues (list[IngestionIssue]): One entry per affected cell or row.
        dropped_rows (int): Rows removed (outside the panel window).
    """

    issues: List[IngestionIssue] = []
    dropped_rows: int = 0

    @computed_field
    def issue_count(self) -> int:
        return len(self.issues)

    def by_reason(self, reason: str) -> List[IngestionIssue]:
        return [issue for issue in self.issues if issue.reason == reason]

    def extended(self, issues: Sequence[IngestionIssue]) -> "IngestionReport":
        return IngestionReport(
            issues=[*self.issues, *issues], dropped_rows=self.dropped_rows
        )


class PanelDataset(BaseModel):
    """
    Immutable long-format firm x year panel.

    Attributes:
        frame (pd.DataFrame): One row per (firm_id, year), sorted by both.
        treatment (dict[str, int]): Time-invariant ETS flag per firm.
        windows (PhaseWindows): Panel span and phase windows.
        report (IngestionReport): Issues found while building the panel.
        base_year (Optional[int]): Base year of the ``dln_*`` columns, if derived.

    Operations return new datasets; the wrapped frame is never modified.
    Treat ``frame`` as read-only and use ``to_frame()`` for a copy that
    may be changed.
    """

    frame: pd.DataFrame
    treatment: Dict[str, int]
    windows: PhaseWindows = PhaseWindows()
    report: IngestionReport = IngestionReport()
    base_year: Optional[int] = None

    model_config = {"frozen": True, "arbitrary_types_allowed": True}

    @classmethod
    def from_frame(
        cls,
        frame: pd.DataFrame,
        windows: Optional[PhaseWindows] = None,
        report: Optional[IngestionReport] = None,
        base_year: Optional[int] = None,
    ) -> "PanelDataset":
        """
        Validate a long-format frame and wrap it.

        The frame must hold at least the mandatory columns; canonical
        columns absent from it are added as missing.
        Raises:
            DuplicateKeyError: (firm_id, year) pairs repeat.
            TreatmentFlagError: the flag varies within a firm or is not 0/1.
            DataError: negative measures.
        """
        frame = frame.copy()
        for column in PANEL_COLUMNS:
            if column not in frame.columns:
                frame[column] = np.nan
        frame["firm_id"] = frame["firm_id"].astype(str)
        frame["year"] = frame["year"].astype("int64")
        frame["industry"] = frame["industry"].astype("Int64")
        for column in NUMERIC_COLUMNS:
            frame[column] = frame[column].astype("float64")

        dupes = frame.duplicated(["firm_id", "year"], keep="first")
        if dupes.any():
            offenders = sorted(
                set(zip(frame.loc[dupes, "firm_id"], frame.loc[dupes, "year"]))
            )
            raise DuplicateKeyError(offenders)

        if frame["treated"].isna().any():
            missing = sorted(frame.loc[frame["treated"].isna(), "firm_id"].unique())
            raise TreatmentFlagError(list(missing), reason="is missing")
        frame["treated"] = frame["treated"].astype("int64")
        if not frame["treated"].isin([0, 1]).all():
            bad = sorted(frame.loc[~frame["treated"].isin([0, 1]), "firm_id"].unique())
            raise TreatmentFlagError(list(bad), reason="is not 0/1")
        varying = frame.groupby("firm_id")["treated"].nunique()
        if (varying > 1).any():
            raise TreatmentFlagError(sorted(varying.index[varying > 1]))

        negative = (frame[NUMERIC_COLUMNS] < 0).any(axis=1)
        if negative.any():
            row = frame.loc[negative].iloc[0]
            raise DataError(
                f"Negative measure for {row['firm_id']}/{row['year']}",
                firm_id=row["firm_id"],
                year=int(row["year"]),
            )

        extra = [c for c in frame.columns if c not in PANEL_COLUMNS]
        frame = frame[PANEL_COLUMNS + extra]
        frame = frame.sort_values(["firm_id", "year"], kind="mergesort")
        frame = frame.reset_index(drop=True)
        treatment = (
            frame.groupby("firm_id", sort=True)["treated"].first().astype(int).to_dict()
        )
        return cls(
            frame=frame,
            treatment=treatment,
            windows=windows or PhaseWindows(),
            report=report or IngestionReport(),
            base_year=base_year,
        )

    @classmethod
    def from_records(
        cls, records: Sequence[FirmYear], windows: Optional[PhaseWindows] = None
    ) -> "PanelDataset":
        frame = pd.DataFrame([r.model_dump() for r in records], columns=PANEL_COLUMNS)
        return cls.from_frame(frame, windows=windows)

    def to_frame(self) -> pd.DataFrame:
        """Deep copy of the wrapped frame."""
        return self.frame.copy()

    def records(self) -> Iterator[FirmYear]:
        for row in self.frame[PANEL_COLUMNS].to_dict(orient="records"):
            yield FirmYear.model_validate(
                {k: (None if pd.isna(v) else v) for k, v in row.items()}
            )

    # --- Lookups ---

    def firm_ids(self) -> List[str]:
        return sorted(self.treatment)

    def treated_ids(self) -> List[str]:
        return sorted(f for f, d in self.treatment.items() if d == 1)

    def control_ids(self) -> List[str]:
        return sorted(f for f, d in self.treatment.items() if d == 0)

    def years(self) -> List[int]:
        return sorted(self.frame["year"].unique().tolist())

    def has_column(self, name: str) -> bool:
        return name in self.frame.columns

    def column(self, name: str) -> pd.Series:
        if name not in self.frame.columns:
            raise UnknownVariableError(name, self.frame.columns)
        return self.frame[name]

    def value(self, firm_id: str, year: int, column: str) -> Optional[float]:
        self.column(column)
        frame = self.frame
        hit = frame[(frame["firm_id"] == firm_id) & (frame["year"] == year)]
        if hit.empty or pd.isna(hit.iloc[0][column]):
            return None
        return float(hit.iloc[0][column])

    def wide(self, column: str) -> pd.DataFrame:
        """Firm x year table of one column (missing cells are NaN)."""
        self.column(column)
        table = self.frame.pivot(index="firm_id", columns="year", values=column)
        return table.astype("float64").reindex(self.firm_ids())

    def at_year(self, year: int) -> pd.DataFrame:
        return self.frame[self.frame["year"] == year]

    def industries(self) -> pd.Series:
        """Industry per firm: first non-missing code in year order."""
        known = self.frame.dropna(subset=["industry"])
        series = known.groupby("firm_id", sort=True)["industry"].first().astype(int)
        return series.reindex(self.firm_ids())

    def treatment_series(self) -> pd.Series:
        return pd.Series(self.treatment, name="treated").sort_index()

    # --- Derivations ---

    def with_frame(
        self,
        frame: pd.DataFrame,
        report: Optional[IngestionReport] = None,
        base_year: Optional[int] = None,
    ) -> "PanelDataset":
        """New dataset over ``frame``, keeping flags of firms still present."""
        firms = set(frame["firm_id"])
        return PanelDataset(
            frame=frame.reset_index(drop=True),
            treatment={f: d for f, d in self.treatment.items() if f in firms},
            windows=self.windows,
            report=report if report is not None else self.report,
            base_year=base_year if base_year is not None else self.base_year,
        )

    def subset(self, firm_ids: Sequence[str]) -> "PanelDataset":
        keep = self.frame["firm_id"].isin(set(firm_ids))
        return self.with_frame(self.frame[keep])

    def restrict_years(self, start: int, end: int) -> "PanelDataset":
        keep = self.frame["year"].between(start, end)
        return self.with_frame(self.frame[keep])

    def restrict_industry(self, industry: int) -> "PanelDataset":
        keep = self.frame["industry"] == industry
        return self.with_frame(self.frame[keep.fillna(False)])

    def equals(self, other: "PanelDataset") -> bool:
        """Field-by-field equality of frames and treatment maps."""
        return self.treatment == other.treatment and self.frame.equals(other.frame)

    def key_pairs(self) -> List[Tuple[str, int]]:
        return list(zip(self.frame["firm_id"], self.frame["year"].astype(int)))


__all__ = [
    "FirmYear",
    "PhaseWindow",
    "PhaseWindows",
    "ColumnSchema",
    "IngestionIssue",
    "IngestionReport",
    "PanelDataset",
]
