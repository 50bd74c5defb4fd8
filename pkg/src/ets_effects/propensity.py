"""
Probit propensity scores and common support.

The probit is fitted by Newton-Raphson on the exact log-likelihood with
step halving (an accepted step never lowers the likelihood beyond rounding)
and a small ridge on the information matrix when a Newton system is near
singular.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, field_validator
from scipy import special, stats

from ets_effects.constants import (
    PROBIT_GTOL,
    PROBIT_MAX_ITER,
    PROBIT_SEPARATION_BOUND,
    RIDGE,
    SupportRule,
)
from ets_effects.errors import (
    ColumnMismatchError,
    ConfigError,
    DataError,
    InsufficientDataError,
    NoOverlapError,
    SeparationError,
)
from ets_effects.inference import check_rank
from ets_effects.panel import log_series, year_values
from ets_effects.panel_models import PanelDataset

logger = logging.getLogger(__name__)

INTERCEPT = "intercept"


class PropensityModel(BaseModel):
    """
    Fitted probit of the treatment flag on covariates.

    Attributes:
        covariates (list[str]): Design column names, intercept first when present.
        coefficients (list[float]): Maximum-likelihood estimates.
        std_errors (list[float]): From the inverse information at the optimum.
        log_likelihood (float): Log-likelihood at the optimum.
        iterations (int): Newton iterations taken.
        converged (bool): Gradient max-norm fell below the tolerance.
    """

    covariates: List[str]
    coefficients: List[float]
    std_errors: List[float]
    log_likelihood: float
    iterations: int
    converged: bool
    n_obs: int
    n_treated: int

    @property
    def has_intercept(self) -> bool:
        return bool(self.covariates) and self.covariates[0] == INTERCEPT

    @property
    def inputs(self) -> List[str]:
        """Covariates expected from callers (everything but the intercept)."""
        return self.covariates[1:] if self.has_intercept else list(self.covariates)

    def coef(self) -> Dict[str, float]:
        return dict(zip(self.covariates, self.coefficients))

    def to_yaml(self) -> str:
        """
        Serialize the model to a YAML string.
        """
        return yaml.dump(self.model_dump(), sort_keys=False)

    @classmethod
    def from_yaml(cls, yaml_str: str):
        """
        Deserialize a YAML string to a model.
        """
        return cls.model_validate(yaml.safe_load(yaml_str))


class ScoredUnit(BaseModel):
    """A firm with its estimated propensity score and probit index."""

    firm_id: str
    propensity: float
    treated: int
    index: float = 0.0

    @field_validator("propensity")
    @classmethod
    def _open_unit_interval(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("propensity must lie strictly inside (0, 1)")
        return v


class SupportResult(BaseModel):
    retained: List[ScoredUnit]
    dropped: List[ScoredUnit]
    rule: str
    bounds: Optional[Tuple[float, float]] = None


# --- Probit ---


def _as_design(
    X: Union[pd.DataFrame, np.ndarray], add_intercept: bool
) -> Tuple[np.ndarray, List[str]]:
    if isinstance(X, pd.DataFrame):
        names = [str(c) for c in X.columns]
        values = X.to_numpy(dtype=float)
    else:
        values = np.asarray(X, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        names = [f"x{j}" for j in range(values.shape[1])]
    if add_intercept:
        values = np.column_stack([np.ones(len(values)), values])
        names = [INTERCEPT, *names]
    return values, names


def probit_terms(beta: np.ndarray, X: np.ndarray, d: np.ndarray):
    """
    Log-likelihood, gradient and information of the probit at ``beta``.

    With ``q = 2d - 1`` and ``z = q x'beta``: ``ll = sum log Phi(z)``,
    ``grad = X' (q lambda)`` and ``info = X' diag(lambda (lambda + z)) X``
    where ``lambda = phi(z) / Phi(z)``.
    """
    q = 2.0 * d - 1.0
    z = q * (X @ beta)
    log_cdf = special.log_ndtr(z)
    lam = np.exp(stats.norm.logpdf(z) - log_cdf)
    grad = X.T @ (q * lam)
    info = (X * (lam * (lam + z))[:, None]).T @ X
    return float(log_cdf.sum()), grad, info, z


def _newton_direction(info: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        logger.debug("Information matrix not positive definite; adding ridge")
        ridge = RIDGE * max(1.0, np.abs(info).max())
        chol = np.linalg.cholesky(info + ridge * np.eye(len(grad)))
    return np.linalg.solve(chol.T, np.linalg.solve(chol, grad))


def fit_probit(
    X: Union[pd.DataFrame, np.ndarray],
    d: Sequence[int],
    add_intercept: bool = True,
    max_iter: int = PROBIT_MAX_ITER,
    gtol: float = PROBIT_GTOL,
) -> PropensityModel:
    """
    Maximum-likelihood probit of ``d`` on ``X``.

    Arguments:
        X: Covariates (DataFrame columns become covariate names).
        d: Binary treatment indicator.
        add_intercept: Prepend an ``intercept`` column.
    Returns:
        PropensityModel; ``converged`` is False if ``max_iter`` is reached.
    Raises:
        InsufficientDataError: no more observations than columns.
        RankDeficiencyError: dependent design columns (named).
        SeparationError: the covariates perfectly separate the groups.
    """
    design, names = _as_design(X, add_intercept)
    d = np.asarray(d, dtype=float)
    n, k = design.shape
    if not np.isin(d, [0.0, 1.0]).all():
        raise DataError("Treatment indicator must be 0/1")
    if n <= k:
        raise InsufficientDataError(
            f"Probit needs more observations ({n}) than columns ({k})", n=n, k=k
        )
    check_rank(design, names)

    beta = np.zeros(k)
    ll, grad, info, z = probit_terms(beta, design, d)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if np.abs(grad).max() < gtol:
            converged = True
            iterations -= 1
            break
        step = _newton_direction(info, grad)
        # Near the optimum the gain drops below rounding error of the sum.
        slack = 64 * np.finfo(float).eps * max(1.0, abs(ll))
        t = 1.0
        while True:
            candidate = beta + t * step
            ll_new, grad_new, info_new, z_new = probit_terms(candidate, design, d)
            if ll_new >= ll - slack:
                break
            t /= 2.0
            if t < 1e-12:
                break
        if ll_new < ll - slack:
            logger.warning("Probit step halving stalled at iteration %d", iterations)
            break
        rising = ll_new > ll
        beta, ll, grad, info, z = candidate, ll_new, grad_new, info_new, z_new
        logger.debug(
            "probit iter %d ll=%.10f |g|=%.3e", iterations, ll, np.abs(grad).max()
        )
        if np.all(z > 0):
            raise SeparationError(
                "Covariates perfectly separate treated and control units",
                iterations=iterations,
            )
        if np.abs(beta).max() > PROBIT_SEPARATION_BOUND and rising:
            raise SeparationError(
                "Probit coefficients diverge; likely (quasi-)separation",
                iterations=iterations,
                max_abs_coefficient=float(np.abs(beta).max()),
            )
    else:
        converged = bool(np.abs(grad).max() < gtol)

    if not converged:
        logger.warning("Probit did not converge (max |grad| %.3e)", np.abs(grad).max())
    try:
        cov = np.linalg.inv(info)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(k, np.nan)
    return PropensityModel(
        covariates=names,
        coefficients=beta.tolist(),
        std_errors=se.tolist(),
        log_likelihood=ll,
        iterations=iterations,
        converged=converged,
        n_obs=n,
        n_treated=int(d.sum()),
    )


def probit_index(model: PropensityModel, X: pd.DataFrame) -> np.ndarray:
    expected = model.inputs
    got = [str(c) for c in X.columns]
    if sorted(got) != sorted(expected):
        raise ColumnMismatchError(expected, got)
    values = X[expected].to_numpy(dtype=float)
    beta = np.asarray(model.coefficients)
    if model.has_intercept:
        return beta[0] + values @ beta[1:]
    return values @ beta


def predict(
    model: PropensityModel,
    X: pd.DataFrame,
    treated: Optional[Sequence[int]] = None,
) -> List[ScoredUnit]:
    """
    Score units: ``p = Phi(x'beta)``, kept strictly inside (0, 1).

    Row labels of ``X`` are the firm ids.
    Raises:
        ColumnMismatchError: X's columns differ from the training design.
    """
    index = probit_index(model, X)
    p = special.ndtr(index)
    p = np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    if treated is None:
        flags = np.zeros(len(X), dtype=int)
    else:
        flags = np.asarray(treated, dtype=int)
    return [
        ScoredUnit(
            firm_id=str(f), propensity=float(pi), treated=int(di), index=float(xi)
        )
        for f, pi, di, xi in zip(X.index, p, flags, index)
    ]


def scored_frame(scored: Sequence[ScoredUnit]) -> pd.DataFrame:
    return pd.DataFrame(
        [u.model_dump() for u in scored],
        columns=["firm_id", "propensity", "treated", "index"],
    )


# --- Covariates ---


def build_covariates(
    ds: PanelDataset,
    tokens: Sequence[str],
    year: int,
    trend_years: Tuple[int, int],
) -> Tuple[pd.DataFrame, List[str]]:
    """
    Firm-level covariate table from tokens.

    Tokens: ``level:<col>`` log level at ``year``; ``raw:<col>`` level at
    ``year``; ``trend:<col>`` ln change between ``trend_years``;
    ``industry`` dummies for industries holding both treated and control
    firms (others share the reference category).
    Returns:
        The table indexed by firm_id (complete rows only) and the firms
        excluded for missing values.
    """
    columns: Dict[str, pd.Series] = {}
    use_industry = False
    for token in tokens:
        kind, _, name = token.partition(":")
        if kind == "industry" and not name:
            use_industry = True
        elif kind == "level":
            columns[token] = year_values(ds, log_series(ds, name), year)
        elif kind == "raw":
            columns[token] = year_values(ds, ds.column(name), year)
        elif kind == "trend":
            logs = log_series(ds, name)
            columns[token] = year_values(ds, logs, trend_years[1]) - year_values(
                ds, logs, trend_years[0]
            )
        else:
            raise ConfigError(f"Unknown covariate token '{token}'", token=token)

    table = pd.DataFrame(columns, index=pd.Index(ds.firm_ids(), name="firm_id"))
    if use_industry:
        industry = ds.industries()
        table["_industry"] = industry
    complete = table.notna().all(axis=1)
    excluded = sorted(table.index[~complete])
    table = table[complete]

    if use_industry:
        flags = ds.treatment_series().reindex(table.index)
        by_industry = flags.groupby(table["_industry"]).agg(["min", "max"])
        is_mixed = (by_industry["min"] == 0) & (by_industry["max"] == 1)
        mixed = sorted(by_industry.index[is_mixed])
        for code in mixed[1:]:
            table[f"industry:{int(code)}"] = (table["_industry"] == code).astype(float)
        table = table.drop(columns="_industry")
    if excluded:
        logger.info("%d firm(s) lack covariates and are not scored", len(excluded))
    return table, excluded


class ScoringResult(BaseModel):
    model: PropensityModel
    scored: List[ScoredUnit]
    excluded: List[str]


def score_panel(
    ds: PanelDataset,
    tokens: Sequence[str],
    year: int,
    trend_years: Tuple[int, int],
) -> ScoringResult:
    """Build covariates, fit the probit and score every firm with covariates."""
    table, excluded = build_covariates(ds, tokens, year, trend_years)
    flags = ds.treatment_series().reindex(table.index).to_numpy()
    model = fit_probit(table, flags)
    scored = predict(model, table, treated=flags)
    logger.info(
        "Probit on %d firms: ll=%.3f, %d iterations",
        model.n_obs,
        model.log_likelihood,
        model.iterations,
    )
    return ScoringResult(model=model, scored=scored, excluded=excluded)


# --- Support ---


def parse_support(text: str) -> Tuple[SupportRule, Optional[float]]:
    """Parse ``minmax``, ``none`` or ``caliper:<radius>``."""
    rule, _, radius = text.partition(":")
    try:
        parsed = SupportRule(rule)
    except ValueError:
        raise ConfigError(f"Unknown support rule '{text}'", support=text) from None
    if parsed is SupportRule.CALIPER:
        try:
            value = float(radius)
        except ValueError:
            raise ConfigError("caliper needs a numeric radius", support=text) from None
        if value <= 0:
            raise ConfigError("caliper radius must be positive", support=text)
        return parsed, value
    return parsed, None


def enforce_common_support(
    scored: Sequence[ScoredUnit],
    rule: Union[SupportRule, str] = SupportRule.MINMAX,
    caliper: Optional[float] = None,
) -> SupportResult:
    """
    Drop treated units outside the control score range.

    ``minmax`` drops treated units with p above the largest or below the
    smallest control p. ``caliper`` drops treated units whose nearest
    control is farther than ``caliper`` on the probit index. Controls are
    always retained.
    Raises:
        DataError: either group is empty.
        NoOverlapError: every treated unit is dropped.
    """
    rule = SupportRule(rule)
    treated = [u for u in scored if u.treated == 1]
    controls = [u for u in scored if u.treated == 0]
    if not treated or not controls:
        raise DataError("Common support needs treated and control units")

    bounds = None
    if rule is SupportRule.MINMAX:
        lo = min(u.propensity for u in controls)
        hi = max(u.propensity for u in controls)
        bounds = (lo, hi)
        keep = [lo <= u.propensity <= hi for u in treated]
    elif rule is SupportRule.CALIPER:
        if caliper is None:
            raise ConfigError("caliper rule needs a radius")
        grid = np.sort([u.index for u in controls])
        keep = []
        for u in treated:
            pos = np.searchsorted(grid, u.index)
            near = [
                abs(grid[j] - u.index) for j in (pos - 1, pos) if 0 <= j < len(grid)
            ]
            keep.append(min(near) <= caliper)
    else:
        keep = [True] * len(treated)

    retained_treated = [u for u, k in zip(treated, keep) if k]
    dropped = [u for u, k in zip(treated, keep) if not k]
    if not retained_treated:
        raise NoOverlapError(
            "No treated unit lies on the common support", dropped=len(dropped)
        )
    if dropped:
        logger.info(
            "Common support (%s) dropped %d treated unit(s)", rule.value, len(dropped)
        )
    return SupportResult(
        retained=retained_treated + controls,
        dropped=dropped,
        rule=rule.value,
        bounds=bounds,
    )


__all__ = [
    "INTERCEPT",
    "PropensityModel",
    "ScoredUnit",
    "SupportResult",
    "probit_terms",
    "fit_probit",
    "probit_index",
    "predict",
    "scored_frame",
    "build_covariates",
    "ScoringResult",
    "score_panel",
    "parse_support",
    "enforce_common_support",
]
