"""
Stochastic production frontiers and distance to the frontier.

Per industry the frontier is Cobb-Douglas in logs,

    ln y = c + b' ln x - w + u,

with symmetric noise ``u ~ N(0, sigma_u^2)`` and one-sided inefficiency
``w >= 0`` distributed ``N+(mu_v, sigma_v^2)`` (``mu_v = 0`` for the
half-normal law). Reports keep the names sigma_u for the noise scale and
mu_v / sigma_v for the inefficiency law. The distance of a firm-year to
its frontier is the conditional mean ``E[w | eps]`` of the composed
residual ``eps = ln y - c - b' ln x``.

Parameters are estimated by maximum likelihood with BFGS on the mean
log-likelihood, an analytic gradient, log-scale sigmas and corrected-OLS
starting values.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, model_validator
from scipy import optimize, stats
from scipy.special import log_ndtr

from ets_effects.constants import (
    BOUNDARY_SIGMA,
    DEFAULT_FRONTIER_BASE_YEAR,
    EXCLUDED_INDUSTRIES,
    FRONTIER_GTOL,
    FRONTIER_INPUTS,
    FRONTIER_MAX_ITER,
    FRONTIER_MIN_OBS,
    FRONTIER_YEARS,
    INDEX_VARIABLES,
    INDUSTRY_NAMES,
    INPUT_LABELS,
    NEWTON_POLISH_STEPS,
    PUBLISHED_FRONTIERS,
    Inefficiency,
)
from ets_effects.errors import (
    DataError,
    EtsEffectsError,
    FrontierConvergenceError,
    InsufficientDataError,
)
from ets_effects.inference import wls
from ets_effects.panel_models import PanelDataset

logger = logging.getLogger(__name__)

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
# Mean of a standard half-normal and the third-moment factor used by COLS.
HALF_NORMAL_MEAN = math.sqrt(2 / math.pi)
HALF_NORMAL_SKEW = HALF_NORMAL_MEAN * (1 - 4 / math.pi)


class FrontierModel(BaseModel):
    """
    Fitted (or fixed) Cobb-Douglas frontier for one industry.

    Attributes:
        industry (Optional[int]): Two-digit industry code.
        inputs (list[str]): Input columns, in elasticity order.
        elasticities (list[float]): Output elasticities of the inputs.
        constant (float): Frontier intercept.
        sigma_u (float): Noise scale.
        mu_v (float): Location of the inefficiency law before truncation.
        sigma_v (float): Scale of the inefficiency law.
        inefficiency (Inefficiency): ``half_normal`` or ``truncated_normal``.
        log_likelihood (Optional[float]): At the optimum.
        std_errors (dict[str, Optional[float]]): By parameter name.
        boundary (bool): sigma_v collapsed to the boundary (no inefficiency).
    """

    industry: Optional[int] = None
    inputs: List[str] = FRONTIER_INPUTS
    elasticities: List[float]
    constant: float
    sigma_u: float
    mu_v: float = 0.0
    sigma_v: float
    inefficiency: Inefficiency = Inefficiency.HALF_NORMAL
    log_likelihood: Optional[float] = None
    n_firms: int = 0
    n_obs: int = 0
    std_errors: Dict[str, Optional[float]] = {}
    iterations: int = 0
    converged: bool = True
    boundary: bool = False

    @model_validator(mode="after")
    def _valid(self) -> "FrontierModel":
        if len(self.elasticities) != len(self.inputs):
            raise ValueError("one elasticity per input required")
        if not all(math.isfinite(b) for b in self.elasticities):
            raise ValueError("elasticities must be finite")
        if self.sigma_u <= 0 or self.sigma_v <= 0:
            raise ValueError("sigma_u and sigma_v must be positive")
        if self.log_likelihood is not None and not math.isfinite(self.log_likelihood):
            raise ValueError("log-likelihood must be finite")
        return self

    @classmethod
    def from_published(
        cls,
        industry: int,
        sigma_v: float = 0.3,
        mu_v: float = 0.0,
        inefficiency: Inefficiency = Inefficiency.HALF_NORMAL,
    ) -> "FrontierModel":
        """Frontier with the published coefficients of ``industry``."""
        try:
            published = PUBLISHED_FRONTIERS[industry]
        except KeyError:
            raise DataError(f"No published frontier for industry {industry}") from None
        firms, capital, labor, energy, constant, sigma_u = published
        return cls(
            industry=industry,
            elasticities=[capital, labor, energy],
            constant=constant,
            sigma_u=sigma_u,
            mu_v=mu_v,
            sigma_v=sigma_v,
            inefficiency=inefficiency,
            n_firms=firms,
        )

    def elasticity(self, name: str) -> float:
        """Elasticity by input column or by label (capital, labor, energy)."""
        for column, value in zip(self.inputs, self.elasticities):
            if name in (column, INPUT_LABELS.get(column, column)):
                return value
        raise KeyError(name)

    def parameter_names(self) -> List[str]:
        names = ["constant"] + [INPUT_LABELS.get(c, c) for c in self.inputs]
        names += ["sigma_u", "sigma_v"]
        if self.inefficiency is Inefficiency.TRUNCATED_NORMAL:
            names.append("mu_v")
        return names

    def theta(self) -> np.ndarray:
        """Optimizer parameter vector: c, b, ln sigma_u, ln sigma_v[, mu_v]."""
        values = [
            self.constant,
            *self.elasticities,
            math.log(self.sigma_u),
            math.log(self.sigma_v),
        ]
        if self.inefficiency is Inefficiency.TRUNCATED_NORMAL:
            values.append(self.mu_v)
        return np.array(values)

    def residuals(self, ln_y: np.ndarray, ln_x: np.ndarray) -> np.ndarray:
        return ln_y - self.constant - ln_x @ np.array(self.elasticities)

    def to_yaml(self) -> str:
        return yaml.dump(self.model_dump(mode="json"), sort_keys=False)

    @classmethod
    def from_yaml(cls, yaml_str: str) -> "FrontierModel":
        return cls.model_validate(yaml.safe_load(yaml_str))


def returns_to_scale(model: FrontierModel) -> float:
    """Sum of the output elasticities."""
    return float(sum(model.elasticities))


# --- Likelihood ---


def _mills(x: np.ndarray) -> np.ndarray:
    """phi(x) / Phi(x), stable for large negative x."""
    return np.exp(stats.norm.logpdf(x) - log_ndtr(x))


def _unpack(theta: np.ndarray, k: int, law: Inefficiency):
    c = theta[0]
    beta = theta[1 : 1 + k]
    s_u = math.exp(theta[1 + k])
    s_v = math.exp(theta[2 + k])
    mu = theta[3 + k] if law is Inefficiency.TRUNCATED_NORMAL else 0.0
    return c, beta, s_u, s_v, mu


def frontier_loglik(
    theta: np.ndarray,
    ln_y: np.ndarray,
    ln_x: np.ndarray,
    law: Union[Inefficiency, str] = Inefficiency.HALF_NORMAL,
) -> np.ndarray:
    """Per-observation log-likelihood at ``theta`` (see ``FrontierModel.theta``)."""
    law = Inefficiency(law)
    c, beta, s_u, s_v, mu = _unpack(np.asarray(theta, dtype=float), ln_x.shape[1], law)
    eps = ln_y - c - ln_x @ beta
    sigma = math.hypot(s_u, s_v)
    z = (eps + mu) / sigma
    a = mu * s_u / (sigma * s_v) - eps * s_v / (sigma * s_u)
    b = mu / s_v
    return -HALF_LOG_2PI - math.log(sigma) - 0.5 * z**2 + log_ndtr(a) - log_ndtr(b)


def frontier_gradient(
    theta: np.ndarray,
    ln_y: np.ndarray,
    ln_x: np.ndarray,
    law: Union[Inefficiency, str] = Inefficiency.HALF_NORMAL,
) -> np.ndarray:
    """Per-observation score matrix (n x p) of ``frontier_loglik``."""
    law = Inefficiency(law)
    k = ln_x.shape[1]
    c, beta, s_u, s_v, mu = _unpack(np.asarray(theta, dtype=float), k, law)
    eps = ln_y - c - ln_x @ beta
    sigma2 = s_u**2 + s_v**2
    sigma = math.sqrt(sigma2)
    sigma3 = sigma2 * sigma
    z = (eps + mu) / sigma
    a = mu * s_u / (sigma * s_v) - eps * s_v / (sigma * s_u)
    b = mu / s_v
    ma = _mills(a)

    g_c = z / sigma + ma * s_v / (sigma * s_u)
    da_du = mu * s_u * s_v / sigma3 + eps * s_v * (s_u**2 + sigma2) / (sigma3 * s_u)
    g_su = (z**2 - 1) * s_u**2 / sigma2 + ma * da_du
    da_dv = -mu * s_u * (s_v**2 + sigma2) / (sigma3 * s_v) - eps * s_u * s_v / sigma3
    g_sv = (z**2 - 1) * s_v**2 / sigma2 + ma * da_dv + _mills(np.float64(b)) * b
    columns = [g_c[:, None], ln_x * g_c[:, None], g_su[:, None], g_sv[:, None]]
    if law is Inefficiency.TRUNCATED_NORMAL:
        g_mu = -z / sigma + ma * s_u / (sigma * s_v) - _mills(np.float64(b)) / s_v
        columns.append(g_mu[:, None])
    return np.hstack(columns)


def jlms_distance(
    eps: np.ndarray, sigma_u: float, sigma_v: float, mu_v: float = 0.0
) -> np.ndarray:
    """
    Conditional mean E[w | eps] of the inefficiency given the composed residual.

    With ``mu* = (mu_v sigma_u^2 - eps sigma_v^2) / sigma^2`` and
    ``sigma* = sigma_u sigma_v / sigma`` this is ``mu* + sigma* phi(a) / Phi(a)``,
    ``a = mu* / sigma*``. Decreasing in eps.
    """
    eps = np.asarray(eps, dtype=float)
    sigma2 = sigma_u**2 + sigma_v**2
    mu_star = (mu_v * sigma_u**2 - eps * sigma_v**2) / sigma2
    sigma_star = sigma_u * sigma_v / math.sqrt(sigma2)
    a = mu_star / sigma_star
    return np.maximum(sigma_star * (a + _mills(a)), 0.0)


# --- Estimation ---


def _numerical_hessian(
    theta: np.ndarray, ln_y: np.ndarray, ln_x: np.ndarray, law: Inefficiency
) -> np.ndarray:
    """Central differences of the analytic total score."""
    p = len(theta)
    hessian = np.zeros((p, p))
    for j in range(p):
        h = 1e-5 * max(1.0, abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        hessian[:, j] = (
            frontier_gradient(up, ln_y, ln_x, law).sum(axis=0)
            - frontier_gradient(down, ln_y, ln_x, law).sum(axis=0)
        ) / (2 * h)
    return 0.5 * (hessian + hessian.T)


def _newton_polish(
    theta: np.ndarray,
    ln_y: np.ndarray,
    ln_x: np.ndarray,
    law: Inefficiency,
    gtol: float,
    steps: int = NEWTON_POLISH_STEPS,
) -> Tuple[np.ndarray, float]:
    n = len(ln_y)
    score = frontier_gradient(theta, ln_y, ln_x, law).mean(axis=0)
    best = float(np.max(np.abs(score)))
    for _ in range(steps):
        if best < gtol:
            break
        try:
            hessian = _numerical_hessian(theta, ln_y, ln_x, law) / n
            step = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError:
            break
        candidate = theta - step
        score_new = frontier_gradient(candidate, ln_y, ln_x, law).mean(axis=0)
        norm = float(np.max(np.abs(score_new)))
        if not np.isfinite(norm) or norm >= best:
            break
        theta, score, best = candidate, score_new, norm
    return theta, best


def _std_errors(
    theta: np.ndarray,
    ln_y: np.ndarray,
    ln_x: np.ndarray,
    law: Inefficiency,
    names: List[str],
) -> Dict[str, Optional[float]]:
    """Inverse observed information; sigmas by the delta method."""
    k = ln_x.shape[1]
    try:
        cov = np.linalg.inv(-_numerical_hessian(theta, ln_y, ln_x, law))
    except np.linalg.LinAlgError:
        logger.warning("Observed information is singular; no standard errors")
        return {name: None for name in names}
    var = np.diag(cov)
    out: Dict[str, Optional[float]] = {}
    for j, name in enumerate(names):
        if not np.isfinite(var[j]) or var[j] < 0:
            out[name] = None
            continue
        se = math.sqrt(var[j])
        if j in (1 + k, 2 + k):
            se *= math.exp(theta[j])
        out[name] = se
    return out


def _cols_start(
    ln_y: np.ndarray, ln_x: np.ndarray, names: List[str]
) -> Tuple[np.ndarray, float, float, Dict[str, float]]:
    """OLS fit, second and third residual moments, and OLS standard errors."""
    design = np.column_stack([np.ones(len(ln_y)), ln_x])
    fit = wls(design, ln_y, names=names)
    resid = np.asarray(fit.residuals)
    m2 = float(np.mean(resid**2))
    m3 = float(np.mean(resid**3))
    return np.asarray(fit.coefficients), m2, m3, {n: fit.se(n) for n in names}


def estimate_frontier(
    ln_y: np.ndarray,
    ln_x: np.ndarray,
    inputs: Sequence[str] = FRONTIER_INPUTS,
    law: Union[Inefficiency, str] = Inefficiency.HALF_NORMAL,
    max_iter: int = FRONTIER_MAX_ITER,
    gtol: float = FRONTIER_GTOL,
) -> FrontierModel:
    """
    Maximum likelihood frontier on log output and log inputs.

    Residuals from OLS that are not negatively skewed (including an exact
    fit) put the model at the boundary: OLS coefficients, noise scale from
    the residuals and ``sigma_v = BOUNDARY_SIGMA``, flagged ``boundary``.
    Convergence means a max-norm below ``gtol`` for the gradient of the
    mean log-likelihood. When BFGS stops short of it (line-search
    precision loss), a few Newton steps on the observed information
    finish the fit.
    Raises:
        FrontierConvergenceError: the gradient stays at or above ``gtol``.
        RankDeficiencyError: collinear log inputs.
    """
    law = Inefficiency(law)
    ln_y = np.asarray(ln_y, dtype=float)
    ln_x = np.asarray(ln_x, dtype=float)
    n, k = ln_x.shape
    labels = ["constant"] + [INPUT_LABELS.get(c, c) for c in inputs]
    beta0, m2, m3, ols_se = _cols_start(ln_y, ln_x, labels)

    scale = max(1.0, float(np.std(ln_y)))
    exact = math.sqrt(m2) <= 1e-10 * scale
    if exact or m3 >= 0:
        reason = "exact fit" if exact else "residuals not negatively skewed"
        logger.warning("Frontier at the boundary (%s): no inefficiency", reason)
        sigma_u = max(math.sqrt(m2), BOUNDARY_SIGMA)
        model = FrontierModel(
            inputs=list(inputs),
            elasticities=beta0[1:].tolist(),
            constant=float(beta0[0]),
            sigma_u=sigma_u,
            sigma_v=BOUNDARY_SIGMA,
            inefficiency=law,
            n_obs=n,
            std_errors=dict(ols_se),
            boundary=True,
        )
        if sigma_u > BOUNDARY_SIGMA:
            loglik = frontier_loglik(model.theta(), ln_y, ln_x, law)
            model.log_likelihood = float(loglik.sum())
        return model

    sigma_v2 = (m3 / HALF_NORMAL_SKEW) ** (2 / 3)
    sigma_u2 = m2 - (1 - 2 / math.pi) * sigma_v2
    if sigma_u2 <= 0.05 * m2:
        sigma_u2 = 0.05 * m2
        sigma_v2 = 0.95 * m2 / (1 - 2 / math.pi)
    start = [beta0[0] + math.sqrt(sigma_v2) * HALF_NORMAL_MEAN, *beta0[1:]]
    start += [0.5 * math.log(sigma_u2), 0.5 * math.log(sigma_v2)]
    if law is Inefficiency.TRUNCATED_NORMAL:
        start.append(0.0)
    theta0 = np.array(start)

    trace: List[float] = []

    def objective(theta: np.ndarray) -> float:
        return -float(np.mean(frontier_loglik(theta, ln_y, ln_x, law)))

    def jacobian(theta: np.ndarray) -> np.ndarray:
        return -frontier_gradient(theta, ln_y, ln_x, law).mean(axis=0)

    def record(theta: np.ndarray) -> None:
        trace.append(objective(theta))
        logger.debug("frontier iteration %d: mean ll %.10f", len(trace), -trace[-1])

    result = optimize.minimize(
        objective,
        theta0,
        jac=jacobian,
        method="BFGS",
        callback=record,
        options={"gtol": gtol, "maxiter": max_iter, "norm": np.inf},
    )
    theta = result.x
    grad_norm = float(np.max(np.abs(jacobian(theta))))
    if grad_norm >= gtol and result.nit < max_iter:
        logger.debug(
            "BFGS stopped at gradient norm %.2e (%s)", grad_norm, result.message
        )
        theta, grad_norm = _newton_polish(theta, ln_y, ln_x, law, gtol)
    if grad_norm >= gtol:
        raise FrontierConvergenceError(
            f"Frontier did not converge after {result.nit} iterations",
            trace=trace,
            gradient_norm=grad_norm,
            status=result.message,
        )

    names = labels + ["sigma_u", "sigma_v"]
    if law is Inefficiency.TRUNCATED_NORMAL:
        names.append("mu_v")
    c, beta, s_u, s_v, mu = _unpack(theta, k, law)
    boundary = s_v < BOUNDARY_SIGMA
    if boundary:
        logger.warning("sigma_v collapsed below %.0e: no inefficiency", BOUNDARY_SIGMA)
        s_v = BOUNDARY_SIGMA
    return FrontierModel(
        inputs=list(inputs),
        elasticities=beta.tolist(),
        constant=float(c),
        sigma_u=s_u,
        mu_v=float(mu),
        sigma_v=s_v,
        inefficiency=law,
        log_likelihood=float(frontier_loglik(theta, ln_y, ln_x, law).sum()),
        n_obs=n,
        std_errors=_std_errors(theta, ln_y, ln_x, law, names),
        iterations=int(result.nit),
        converged=True,
        boundary=boundary,
    )


def frontier_data(
    ds: PanelDataset,
    inputs: Sequence[str] = FRONTIER_INPUTS,
    output: str = "output",
    years: Tuple[int, int] = FRONTIER_YEARS,
) -> Tuple[pd.DataFrame, pd.Series]:
    """
    Usable observations: firm-years in ``years`` with positive output and inputs.

    Returns the kept rows (firm_id, year, ln output, ln inputs) and a
    per-row reason for every dropped row.
    """
    frame = ds.frame[ds.frame["year"].between(*years)]
    columns = [output, *inputs]
    values = frame[columns].astype(float)
    missing = values.isna().any(axis=1)
    nonpositive = ~missing & (values <= 0).any(axis=1)
    reasons = pd.Series(None, index=frame.index, dtype=object)
    reasons[missing] = "missing input or output"
    reasons[nonpositive] = "nonpositive input or output"
    keep = ~(missing | nonpositive)
    logs = np.log(values[keep])
    kept = pd.DataFrame(
        {"firm_id": frame.loc[keep, "firm_id"], "year": frame.loc[keep, "year"]}
    )
    for column in columns:
        kept[f"ln_{column}"] = logs[column]
    return kept.reset_index(drop=True), reasons.dropna()


def fit_frontier(
    ds: PanelDataset,
    industry: Optional[int] = None,
    inputs: Sequence[str] = FRONTIER_INPUTS,
    output: str = "output",
    law: Union[Inefficiency, str] = Inefficiency.HALF_NORMAL,
    years: Tuple[int, int] = FRONTIER_YEARS,
    min_obs: int = FRONTIER_MIN_OBS,
    max_iter: int = FRONTIER_MAX_ITER,
    gtol: float = FRONTIER_GTOL,
) -> FrontierModel:
    """
    Pooled frontier over ``years`` for one industry.

    Raises:
        InsufficientDataError: fewer than ``min_obs`` usable observations.
    """
    if industry is not None:
        ds = ds.restrict_industry(industry)
    data, dropped = frontier_data(ds, inputs, output, years)
    if len(dropped):
        logger.info("Frontier %s: %d observation(s) unusable", industry, len(dropped))
    if len(data) < min_obs:
        raise InsufficientDataError(
            f"Frontier needs at least {min_obs} observations, got {len(data)}",
            industry=industry,
            n_obs=len(data),
        )
    model = estimate_frontier(
        data[f"ln_{output}"].to_numpy(),
        data[[f"ln_{c}" for c in inputs]].to_numpy(),
        inputs=inputs,
        law=law,
        max_iter=max_iter,
        gtol=gtol,
    )
    model.industry = industry
    model.n_firms = int(data["firm_id"].nunique())
    logger.info(
        "Frontier %s: %d obs, returns to scale %.3f%s",
        industry,
        model.n_obs,
        returns_to_scale(model),
        " (boundary)" if model.boundary else "",
    )
    return model


class FrontierFits(BaseModel):
    """Per-industry fits plus the reason each missing industry failed."""

    models: Dict[int, FrontierModel] = {}
    failures: Dict[int, str] = {}


def fit_frontiers(
    ds: PanelDataset,
    industries: Optional[Sequence[int]] = None,
    exclude: Sequence[int] = EXCLUDED_INDUSTRIES,
    n_jobs: int = 1,
    **kwargs,
) -> FrontierFits:
    """Fit every industry independently; failures are recorded, not raised."""
    codes = sorted(industries) if industries is not None else sorted(
        int(c) for c in ds.frame["industry"].dropna().unique()
    )
    codes = [c for c in codes if c not in set(exclude)]

    def run(code: int) -> Tuple[int, Union[FrontierModel, str]]:
        try:
            return code, fit_frontier(ds, industry=code, **kwargs)
        except EtsEffectsError as exc:
            logger.warning("Frontier for industry %d failed: %s", code, exc.message)
            return code, f"{type(exc).__name__}: {exc.message}"

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(run, codes))
    else:
        outcomes = [run(code) for code in codes]
    fits = FrontierFits()
    for code, outcome in outcomes:
        if isinstance(outcome, FrontierModel):
            fits.models[code] = outcome
        else:
            fits.failures[code] = outcome
    return fits


# --- Scores ---


class EfficiencyScore(BaseModel):
    """Distance of a firm-year to its frontier, in log-output units."""

    firm_id: str
    year: int
    distance: Optional[float] = None
    reason: Optional[str] = None

    @model_validator(mode="after")
    def _nonnegative(self) -> "EfficiencyScore":
        if self.distance is not None and self.distance < 0:
            raise ValueError("distance must be nonnegative")
        return self


def efficiency_scores(
    model: FrontierModel,
    ds: PanelDataset,
    output: str = "output",
    years: Optional[Tuple[int, int]] = None,
) -> List[EfficiencyScore]:
    """
    Distance to the frontier for every firm-year of ``ds``.

    Firm-years with a missing or nonpositive input or output get no
    distance and a reason.
    """
    frame = ds.frame if years is None else ds.frame[ds.frame["year"].between(*years)]
    columns = [output, *model.inputs]
    values = frame[columns].astype(float)
    missing = values.isna().any(axis=1).to_numpy()
    nonpositive = ~missing & (values <= 0).any(axis=1).to_numpy()
    ok = ~(missing | nonpositive)
    distances = np.full(len(frame), np.nan)
    if ok.any():
        logs = np.log(values.to_numpy()[ok])
        eps = model.residuals(logs[:, 0], logs[:, 1:])
        distances[ok] = jlms_distance(eps, model.sigma_u, model.sigma_v, model.mu_v)
    scores = []
    for firm, year, d, miss, nonpos in zip(
        frame["firm_id"], frame["year"], distances, missing, nonpositive
    ):
        if miss:
            score = EfficiencyScore(
                firm_id=firm, year=int(year), reason="missing input or output"
            )
        elif nonpos:
            score = EfficiencyScore(
                firm_id=firm, year=int(year), reason="nonpositive input or output"
            )
        else:
            score = EfficiencyScore(firm_id=firm, year=int(year), distance=float(d))
        scores.append(score)
    return scores


def panel_scores(
    ds: PanelDataset, fits: FrontierFits, years: Tuple[int, int] = FRONTIER_YEARS
) -> List[EfficiencyScore]:
    """Scores of every firm-year whose industry has a fitted frontier."""
    scores: List[EfficiencyScore] = []
    for code, model in sorted(fits.models.items()):
        scores.extend(efficiency_scores(model, ds.restrict_industry(code), years=years))
    return sorted(scores, key=lambda s: (s.firm_id, s.year))


def score_frame(scores: Sequence[EfficiencyScore]) -> pd.DataFrame:
    return pd.DataFrame(
        [s.model_dump() for s in scores],
        columns=["firm_id", "year", "distance", "reason"],
    )


def median_distance_series(
    scores: Sequence[EfficiencyScore], ds: PanelDataset, by_industry: bool = True
) -> pd.DataFrame:
    """
    Median distance per (industry, group, year).

    Groups are ``treated`` and ``control``; rows with industry ``all``
    pool every industry.
    """
    frame = score_frame(scores).dropna(subset=["distance"])
    if frame.empty:
        return pd.DataFrame(
            columns=["industry", "group", "year", "median_distance", "n"]
        )
    groups = {1: "treated", 0: "control"}
    frame["group"] = frame["firm_id"].map(ds.treatment).map(groups)
    frame["industry"] = frame["firm_id"].map(ds.industries()).map(
        lambda v: "" if pd.isna(v) else str(int(v))
    )
    parts = [frame.assign(industry="all")]
    if by_industry:
        parts.insert(0, frame)
    pooled = pd.concat(parts, ignore_index=True)
    series = (
        pooled.groupby(["industry", "group", "year"])["distance"]
        .agg(median_distance="median", n="count")
        .reset_index()
    )
    return series


def indexed_median_series(
    ds: PanelDataset,
    variables: Sequence[str] = INDEX_VARIABLES,
    base_year: int = DEFAULT_FRONTIER_BASE_YEAR,
) -> pd.DataFrame:
    """
    Yearly cross-firm medians per industry, indexed to 1 in ``base_year``.

    The index is missing where the base-year median is missing or zero.
    """
    if base_year not in ds.years():
        raise DataError(f"Base year {base_year} not present in panel", year=base_year)
    rows = []
    frame = ds.frame.dropna(subset=["industry"])
    for industry, block in frame.groupby("industry", sort=True):
        for variable in variables:
            medians = block.groupby("year")[ds.column(variable).name].median()
            base = medians.get(base_year, np.nan)
            for year, median in medians.items():
                index = median / base if pd.notna(base) and base != 0 else np.nan
                rows.append(
                    {
                        "industry": int(industry),
                        "variable": variable,
                        "year": int(year),
                        "median": float(median),
                        "index": float(index),
                    }
                )
    columns = ["industry", "variable", "year", "median", "index"]
    return pd.DataFrame(rows, columns=columns)


def frontier_table(fits: FrontierFits) -> pd.DataFrame:
    """Per-industry coefficient table with standard errors and returns to scale."""
    rows = []
    for code in sorted(set(fits.models) | set(fits.failures)):
        row: Dict[str, object] = {
            "industry": code,
            "name": INDUSTRY_NAMES.get(code, ""),
        }
        model = fits.models.get(code)
        if model is None:
            row.update(status="failed", error=fits.failures[code])
            rows.append(row)
            continue
        row.update(n_firms=model.n_firms, n_obs=model.n_obs)
        for name in model.parameter_names():
            if name.startswith("sigma") or name == "mu_v":
                value = getattr(model, name)
            elif name == "constant":
                value = model.constant
            else:
                value = model.elasticity(name)
            row[name] = value
            row[f"{name}_se"] = model.std_errors.get(name)
        row.update(
            returns_to_scale=returns_to_scale(model),
            log_likelihood=model.log_likelihood,
            inefficiency=model.inefficiency.value,
            boundary=model.boundary,
            status="ok",
        )
        rows.append(row)
    return pd.DataFrame(rows)


__all__ = [
    "FrontierModel",
    "returns_to_scale",
    "frontier_loglik",
    "frontier_gradient",
    "jlms_distance",
    "estimate_frontier",
    "frontier_data",
    "fit_frontier",
    "FrontierFits",
    "fit_frontiers",
    "EfficiencyScore",
    "efficiency_scores",
    "panel_scores",
    "score_frame",
    "median_distance_series",
    "indexed_median_series",
    "frontier_table",
]
