"""
Run configuration.

A run is described by one YAML file; command-line flags override its
values. The resolved config, minus settings that cannot change results
(output directory, worker count), is embedded in every run manifest.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ValidationError

from ets_effects.constants import (
    ATT_NEIGHBORS,
    BOOTSTRAP_REPS,
    DEFAULT_COVARIATE_YEAR,
    DEFAULT_COVARIATES,
    DEFAULT_FRONTIER_BASE_YEAR,
    DEFAULT_OUTCOMES,
    DEFAULT_PRE_YEAR,
    DEFAULT_SATT_COVARIATES,
    DEFAULT_TREND_YEARS,
    DESCRIBE_VARIABLES,
    EXCLUDED_INDUSTRIES,
    FRONTIER_MIN_OBS,
    FRONTIER_YEARS,
    SATT_NEIGHBORS,
    DistanceScale,
    Inefficiency,
    Pooling,
    SeMethod,
)
from ets_effects.errors import ConfigError
from ets_effects.panel_models import ColumnSchema, PhaseWindows
from ets_effects.propensity import parse_support

# Settings that never change the contents of a bundle.
NON_RESULT_KEYS = {"output_dir", "n_jobs", "db_url"}


class RunConfig(BaseModel):
    """
    Pipeline settings.

    Either ``input`` (a panel CSV) or ``preset`` (a synthetic scenario,
    generated with ``seed``) must be given.
    """

    input: Optional[str] = None
    preset: Optional[str] = None
    n_firms: Optional[int] = None
    columns: ColumnSchema = ColumnSchema()
    output_dir: str = "out"

    outcomes: List[str] = DEFAULT_OUTCOMES
    describe_variables: List[str] = DESCRIBE_VARIABLES
    disclosure_floor: int = 0

    covariates: List[str] = DEFAULT_COVARIATES
    covariate_year: int = DEFAULT_COVARIATE_YEAR
    trend_years: Tuple[int, int] = DEFAULT_TREND_YEARS
    support: str = "minmax"

    neighbors: List[int] = ATT_NEIGHBORS
    reweight: bool = True
    normalize_weights: bool = False
    distance_scale: DistanceScale = DistanceScale.PROBABILITY
    exact_on_industry: bool = False

    windows: PhaseWindows = PhaseWindows.for_att()
    pre_year: int = DEFAULT_PRE_YEAR
    per_year: bool = False
    pooling: Pooling = Pooling.PHASE_MEAN
    ols_covariates: List[str] = []
    se_method: SeMethod = SeMethod.SANDWICH
    n_boot: int = BOOTSTRAP_REPS

    frontier: bool = True
    frontier_years: Tuple[int, int] = FRONTIER_YEARS
    frontier_base_year: int = DEFAULT_FRONTIER_BASE_YEAR
    inefficiency: Inefficiency = Inefficiency.HALF_NORMAL
    industries: Optional[List[int]] = None
    exclude_industries: List[int] = EXCLUDED_INDUSTRIES
    frontier_min_obs: int = FRONTIER_MIN_OBS

    satt_neighbors: List[int] = SATT_NEIGHBORS
    satt_covariates: List[str] = DEFAULT_SATT_COVARIATES
    satt_industry: Optional[int] = None

    seed: int = 1
    n_jobs: int = 1
    db_url: Optional[str] = None

    @classmethod
    def from_yaml(cls, yaml_str: str) -> "RunConfig":
        try:
            data = yaml.safe_load(yaml_str) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"Config is not valid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("Config must be a key-value mapping")
        return cls.validated(data)

    @classmethod
    def from_yaml_file(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}", path=str(path))
        return cls.from_yaml(path.read_text(encoding="utf-8"))

    @classmethod
    def validated(cls, data: Dict[str, Any]) -> "RunConfig":
        """Build and check a config; validation failures become ConfigError."""
        try:
            cfg = cls.model_validate(data)
        except ValidationError as exc:
            raise ConfigError(
                "Invalid configuration",
                errors=[
                    {"field": ".".join(str(p) for p in e["loc"]), "message": e["msg"]}
                    for e in exc.errors()
                ],
            ) from None
        cfg.check()
        return cfg

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with every non-None override applied (flags win over the file)."""
        data = self.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return self.validated(data)

    def check(self) -> None:
        if not self.input and not self.preset:
            raise ConfigError("Either 'input' or 'preset' is required")
        if self.input and self.preset:
            raise ConfigError("Give only one of 'input' and 'preset'")
        parse_support(self.support)
        for m in [*self.neighbors, *self.satt_neighbors]:
            if m < 1:
                raise ConfigError("Neighbour counts must be at least 1", neighbors=m)
        if not self.neighbors and not self.reweight:
            raise ConfigError("No weighting scheme requested")
        start = self.windows.treatment_start
        if not (self.pre_year < start and self.covariate_year < start):
            raise ConfigError(
                "pre_year and covariate_year must precede the first trading phase",
                pre_year=self.pre_year,
                covariate_year=self.covariate_year,
            )
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be at least 1")

    def manifest_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude=NON_RESULT_KEYS)

    def to_yaml(self) -> str:
        return yaml.dump(self.model_dump(mode="json"), sort_keys=False)


__all__ = ["RunConfig", "NON_RESULT_KEYS"]
