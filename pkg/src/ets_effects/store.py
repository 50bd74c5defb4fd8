import logging
from typing import Any, Dict, List

import pandas as pd
from sqlalchemy.orm import Session

from ets_effects.db_models import (
    AttResultRow,
    FrontierResultRow,
    ResultRow,
    RunSnapshot,
    SattResultRow,
    Study,
)
from ets_effects.pipeline import ReportBundle

logger = logging.getLogger(__name__)

# Frontier table columns that are not model parameters
_FRONTIER_META = {
    "industry",
    "name",
    "status",
    "error",
    "returns_to_scale",
    "log_likelihood",
}


def _clean(value: Any) -> Any:
    """NaN and pandas missing markers become None; numpy scalars become Python."""
    if isinstance(value, (list, dict)):
        return value
    if value is None or pd.isna(value):
        return None
    return value.item() if hasattr(value, "item") else value


def _int(value: Any) -> Any:
    return None if value is None else int(value)


def _records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    return [
        {key: _clean(value) for key, value in row.items()}
        for row in frame.to_dict(orient="records")
    ]


def _att_rows(frame: pd.DataFrame) -> List[ResultRow]:
    return [
        AttResultRow(
            status=row["status"],
            error=row.get("error"),
            outcome=row["outcome"],
            window=row["window"],
            estimator=row["estimator"],
            estimate=row.get("estimate"),
            se=row.get("se"),
            p_value=row.get("p_value"),
            stars=row.get("stars"),
            n_treated=_int(row.get("n_treated")),
            n_controls=_int(row.get("n_controls")),
        )
        for row in _records(frame)
    ]


def _satt_rows(frame: pd.DataFrame) -> List[ResultRow]:
    return [
        SattResultRow(
            status=row["status"],
            error=row.get("error"),
            window=row["window"],
            neighbors=row["neighbors"],
            industry=_int(row.get("industry")),
            estimate=row.get("estimate"),
            se=row.get("se"),
            p_value=row.get("p_value"),
            significant=row.get("significant"),
            n_treated=_int(row.get("n_treated")),
        )
        for row in _records(frame)
    ]


def _frontier_rows(frame: pd.DataFrame) -> List[ResultRow]:
    rows: List[ResultRow] = []
    for row in _records(frame):
        params = {k: v for k, v in row.items() if k not in _FRONTIER_META}
        rows.append(
            FrontierResultRow(
                status=row["status"],
                error=row.get("error"),
                industry=row["industry"],
                returns_to_scale=row.get("returns_to_scale"),
                log_likelihood=row.get("log_likelihood"),
                params_json=params,
            )
        )
    return rows


_BUILDERS = {
    "att_grid.csv": _att_rows,
    "satt_table.csv": _satt_rows,
    "frontier_coeffs.csv": _frontier_rows,
}


def ingest_bundle(
    session: Session, bundle: ReportBundle, study_name: str
) -> RunSnapshot:
    """
    Saves a finished report bundle into the DB as a new run snapshot.

    The study is created on first use and reused by name afterwards, so
    repeated runs accumulate as snapshots of the same study.
    """
    study = session.query(Study).filter_by(name=study_name).first()
    if not study:
        study = Study(name=study_name)
        session.add(study)
        session.flush()

    manifest = bundle.manifest
    snapshot = RunSnapshot(
        study_id=study.id,
        version=str(manifest.get("version", "")),
        seed=int(manifest.get("seed", 0)),
        status=str(manifest.get("status", "ok")),
        config_json=dict(manifest.get("config", {})),
        manifest_json=dict(manifest),
    )
    session.add(snapshot)
    session.flush()

    for name, build in _BUILDERS.items():
        frame = bundle.tables.get(name)
        if frame is None:
            continue
        for row in build(frame):
            row.run_id = snapshot.id
            session.add(row)

    session.commit()
    logger.info("Stored run %d for study %s", snapshot.id, study_name)
    return snapshot


__all__ = ["ingest_bundle"]
