"""
Exception hierarchy.

Every error belongs to one of three categories with a stable exit code:
configuration (2), data (3) and estimation (4). All of them are also
``ValueError`` subclasses.
"""

from typing import Any, Dict, Iterable, List, Optional, Tuple

from ets_effects.constants import ExitCode


class EtsEffectsError(Exception):
    """Base class for package errors."""

    category = "error"
    exit_code = ExitCode.FAILURE

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form printed by the CLI on failure."""
        return {
            "error": type(self).__name__,
            "category": self.category,
            "exit_code": int(self.exit_code),
            "message": self.message,
            "details": self.details,
        }


class ConfigError(EtsEffectsError, ValueError):
    category = "config"
    exit_code = ExitCode.CONFIG


class DataError(EtsEffectsError, ValueError):
    category = "data"
    exit_code = ExitCode.DATA


class EstimationError(EtsEffectsError, ValueError):
    category = "estimation"
    exit_code = ExitCode.ESTIMATION


# --- Configuration ---


class UnknownVariableError(ConfigError):
    def __init__(self, name: str, known: Iterable[str]):
        known = sorted(known)
        super().__init__(f"Unknown variable '{name}'", variable=name, known=known)


class ColumnMismatchError(ConfigError):
    def __init__(self, expected: List[str], got: List[str]):
        super().__init__(
            "Design columns do not match the fitted model",
            expected=expected,
            got=got,
        )


class UnknownPresetError(ConfigError):
    def __init__(self, name: str, presets: Iterable[str]):
        presets = sorted(presets)
        super().__init__(
            f"Unknown preset '{name}'; available: {', '.join(presets)}",
            preset=name,
            presets=presets,
        )


# --- Data ---


class MissingColumnError(DataError):
    def __init__(self, column: str):
        super().__init__(f"Mandatory column '{column}' is missing", column=column)


class DuplicateKeyError(DataError):
    def __init__(self, offenders: List[Tuple[str, int]]):
        listed = ", ".join(f"{firm}/{year}" for firm, year in offenders[:20])
        super().__init__(
            f"Duplicate (firm_id, year) keys: {listed}",
            offenders=[[firm, int(year)] for firm, year in offenders],
        )


class TreatmentFlagError(DataError):
    def __init__(self, firm_ids: List[str], reason: str = "varies within firm"):
        super().__init__(
            f"Treatment flag {reason}: {', '.join(firm_ids[:20])}",
            firm_ids=firm_ids,
        )


class UnknownFirmError(DataError):
    def __init__(self, firm_ids: List[str]):
        super().__init__(
            f"Weights reference firms not in the panel: {', '.join(firm_ids[:20])}",
            firm_ids=firm_ids,
        )


class InsufficientDataError(DataError):
    pass


# --- Estimation ---


class SeparationError(EstimationError):
    pass


class RankDeficiencyError(EstimationError):
    def __init__(self, columns: List[str]):
        super().__init__(
            f"Design matrix is rank deficient; dependent columns: {', '.join(columns)}",
            columns=columns,
        )


class NoOverlapError(EstimationError):
    pass


class WeightOverflowError(EstimationError):
    pass


class NegativeWeightError(EstimationError):
    pass


class FrontierConvergenceError(EstimationError):
    def __init__(self, message: str, trace: Optional[List[float]] = None, **details):
        super().__init__(message, trace=trace or [], **details)


class PipelineStageError(EtsEffectsError):
    """Wraps the error that stopped a pipeline stage."""

    def __init__(self, stage: str, cause: EtsEffectsError):
        super().__init__(f"Stage '{stage}' failed: {cause.message}", stage=stage)
        self.stage = stage
        self.cause = cause
        self.category = cause.category
        self.exit_code = cause.exit_code

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data["cause"] = self.cause.to_dict()
        return data
