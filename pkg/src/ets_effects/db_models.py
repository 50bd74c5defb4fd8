from datetime import datetime
from typing import Any, Dict, List, Optional

from sqlalchemy import JSON, Boolean, Float, ForeignKey, Integer, String
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship


class Base(DeclarativeBase):
    pass


# --- Parents ---


class Study(Base):
    """A named line of runs (usually one per dataset)."""

    __tablename__ = "studies"

    id: Mapped[int] = mapped_column(primary_key=True)
    name: Mapped[str] = mapped_column(String, unique=True)

    runs: Mapped[List["RunSnapshot"]] = relationship(
        back_populates="study", cascade="all, delete-orphan"
    )


class RunSnapshot(Base):
    """One pipeline run: its manifest and every result row it produced."""

    __tablename__ = "run_snapshots"

    id: Mapped[int] = mapped_column(primary_key=True)
    created_at: Mapped[datetime] = mapped_column(default=datetime.utcnow)
    study_id: Mapped[int] = mapped_column(ForeignKey("studies.id"), index=True)

    version: Mapped[str] = mapped_column(String(20))
    seed: Mapped[int] = mapped_column(Integer)
    status: Mapped[str] = mapped_column(String(10))
    config_json: Mapped[Dict[str, Any]] = mapped_column(JSON)
    manifest_json: Mapped[Dict[str, Any]] = mapped_column(JSON)

    study: Mapped["Study"] = relationship(back_populates="runs")
    results: Mapped[List["ResultRow"]] = relationship(
        back_populates="run", cascade="all, delete-orphan"
    )


# --- Results (Polymorphic) ---


class ResultRow(Base):
    """
    Base result row.
    Every estimate points at one run regardless of the table it came from.
    """

    __tablename__ = "results"

    id: Mapped[int] = mapped_column(primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("run_snapshots.id"), index=True)

    # Discriminator column (att / satt / frontier)
    type: Mapped[str] = mapped_column(String(20))

    status: Mapped[str] = mapped_column(String(10))
    error: Mapped[Optional[str]] = mapped_column(String)

    run: Mapped["RunSnapshot"] = relationship(back_populates="results")

    __mapper_args__ = {
        "polymorphic_identity": "result",
        "polymorphic_on": "type",
    }


class AttResultRow(ResultRow):
    __tablename__ = "att_results"
    id: Mapped[int] = mapped_column(ForeignKey("results.id"), primary_key=True)
    outcome: Mapped[str] = mapped_column(String(40))
    window: Mapped[str] = mapped_column(String(20))
    estimator: Mapped[str] = mapped_column(String(20))
    estimate: Mapped[Optional[float]] = mapped_column(Float)
    se: Mapped[Optional[float]] = mapped_column(Float)
    p_value: Mapped[Optional[float]] = mapped_column(Float)
    stars: Mapped[Optional[str]] = mapped_column(String(5))
    n_treated: Mapped[Optional[int]] = mapped_column(Integer)
    n_controls: Mapped[Optional[int]] = mapped_column(Integer)

    __mapper_args__ = {
        "polymorphic_identity": "att",
    }


class SattResultRow(ResultRow):
    __tablename__ = "satt_results"
    id: Mapped[int] = mapped_column(ForeignKey("results.id"), primary_key=True)
    window: Mapped[str] = mapped_column(String(20))
    neighbors: Mapped[int] = mapped_column(Integer)
    industry: Mapped[Optional[int]] = mapped_column(Integer)
    estimate: Mapped[Optional[float]] = mapped_column(Float)
    se: Mapped[Optional[float]] = mapped_column(Float)
    p_value: Mapped[Optional[float]] = mapped_column(Float)
    significant: Mapped[Optional[bool]] = mapped_column(Boolean)
    n_treated: Mapped[Optional[int]] = mapped_column(Integer)

    __mapper_args__ = {
        "polymorphic_identity": "satt",
    }


class FrontierResultRow(ResultRow):
    __tablename__ = "frontier_results"
    id: Mapped[int] = mapped_column(ForeignKey("results.id"), primary_key=True)
    industry: Mapped[int] = mapped_column(Integer)
    returns_to_scale: Mapped[Optional[float]] = mapped_column(Float)
    log_likelihood: Mapped[Optional[float]] = mapped_column(Float)
    # Coefficients and standard errors keyed by parameter name
    params_json: Mapped[Dict[str, Any]] = mapped_column(JSON, default=dict)

    __mapper_args__ = {
        "polymorphic_identity": "frontier",
    }
