"""
Synthetic firm panels with known treatment effects.

Each firm draws from its own PCG64 stream spawned from the config seed
(``numpy.random.SeedSequence(seed).spawn``), so a panel is identical for
any worker count. Output follows the industry's Cobb-Douglas frontier
minus one-sided inefficiency plus noise. Emissions follow the fuel mix of
energy use. Treatment is assigned by a probit on base-year size and
emission intensity whose intercept is solved for the target share.
Configured effects are additive log shifts on treated firms in the
trading-phase years.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy import optimize, stats

from ets_effects.constants import (
    DEFAULT_COVARIATE_YEAR,
    DEFAULT_PANEL_YEARS,
    EMISSION_FACTORS,
    ENERGY_COMPONENTS,
    PANEL_COLUMNS,
    PHASE_LABEL_LIST,
    PUBLISHED_FRONTIERS,
    Inefficiency,
    PhaseLabel,
)
from ets_effects.errors import ConfigError, UnknownPresetError, UnknownVariableError
from ets_effects.panel_models import PanelDataset, PhaseWindows

logger = logging.getLogger(__name__)

EFFECT_OUTCOMES: List[str] = [
    "output",
    "co2",
    "employees",
    "exports",
    "capital",
    "energy_total",
    "distance",
]

# Fuel-mix concentration for electricity, gas, oil, other primary.
FUEL_MIX_ALPHA = [4.0, 3.0, 1.5, 1.0]
EXPORTER_SHARE = 0.65


class IndustryTruth(BaseModel):
    """
    True frontier and shock parameters of one industry.

    Attributes:
        elasticities (list[float]): Capital, labor, energy.
        constant (float): Frontier intercept.
        sigma_u (float): Noise scale (0 for none).
        sigma_v (float): Inefficiency scale (0 for none).
        mu_v (float): Inefficiency location before truncation.
        weight (float): Relative share of firms.
        crisis_drop (float): Share of output lost in the crisis year.
    """

    elasticities: List[float]
    constant: float
    sigma_u: float
    sigma_v: float = 0.3
    mu_v: float = 0.0
    inefficiency: Inefficiency = Inefficiency.HALF_NORMAL
    weight: float = 1.0
    crisis_drop: float = 0.2

    @classmethod
    def from_published(cls, industry: int, **overrides) -> "IndustryTruth":
        _, capital, labor, energy, constant, sigma_u = PUBLISHED_FRONTIERS[industry]
        values = dict(
            elasticities=[capital, labor, energy], constant=constant, sigma_u=sigma_u
        )
        values.update(overrides)
        return cls(**values)


def _published_industries() -> Dict[int, IndustryTruth]:
    return {
        code: IndustryTruth.from_published(code) for code in sorted(PUBLISHED_FRONTIERS)
    }


class SynthConfig(BaseModel):
    """
    Generator settings. ``seed`` has no default.

    ``sigma_u``, ``sigma_v`` and ``crisis_drop`` override every industry
    when set. ``effects`` maps outcome -> phase label -> additive log
    effect; ``distance`` effects move the firm toward (negative) or away
    from its frontier. ``effect_industries`` limits effects to treated
    firms of those industries.
    """

    n_firms: int = 5000
    treated_share: float = 0.01
    years: Tuple[int, int] = DEFAULT_PANEL_YEARS
    base_year: int = DEFAULT_COVARIATE_YEAR
    industries: Dict[int, IndustryTruth] = Field(default_factory=_published_industries)
    sigma_u: Optional[float] = None
    sigma_v: Optional[float] = None
    crisis_drop: Optional[float] = None
    crisis_year: int = 2009
    selection_size: float = 0.8
    selection_dirty: float = 0.5
    effects: Dict[str, Dict[str, float]] = {}
    effect_industries: Optional[List[int]] = None
    seed: int

    def check(self) -> None:
        """
        Raises:
            UnknownVariableError: an effect names an unknown outcome.
            ConfigError: any other invalid setting.
        """
        if self.n_firms < 1:
            raise ConfigError("n_firms must be positive", n_firms=self.n_firms)
        if not 0 <= self.treated_share < 1:
            raise ConfigError(
                "treated_share must be in [0, 1)", treated_share=self.treated_share
            )
        start, end = self.years
        if start > end or not start <= self.base_year <= end:
            raise ConfigError(
                "base_year must lie in the panel years", years=list(self.years)
            )
        if not self.industries:
            raise ConfigError("at least one industry is required")
        for code, truth in self.industries.items():
            if len(truth.elasticities) != 3:
                raise ConfigError("three elasticities per industry", industry=code)
            if truth.sigma_u < 0 or truth.sigma_v < 0 or truth.weight <= 0:
                raise ConfigError(
                    "industry scales must be >= 0 and weight > 0", industry=code
                )
            if not 0 <= truth.crisis_drop < 1:
                raise ConfigError("crisis_drop must be in [0, 1)", industry=code)
        for name in ("sigma_u", "sigma_v"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.crisis_drop is not None and not 0 <= self.crisis_drop < 1:
            raise ConfigError("crisis_drop must be in [0, 1)")
        for outcome, phases in self.effects.items():
            if outcome not in EFFECT_OUTCOMES:
                raise UnknownVariableError(outcome, EFFECT_OUTCOMES)
            for label in phases:
                if label not in (PhaseLabel.PHASE_I.value, PhaseLabel.PHASE_II.value):
                    raise ConfigError(
                        f"Unknown effect phase '{label}'",
                        phase=label,
                        phases=PHASE_LABEL_LIST[1:],
                    )

    def truth(self, code: int) -> IndustryTruth:
        """Industry truth with the config-level overrides applied."""
        truth = self.industries[code]
        overrides = {
            k: v
            for k, v in (
                ("sigma_u", self.sigma_u),
                ("sigma_v", self.sigma_v),
                ("crisis_drop", self.crisis_drop),
            )
            if v is not None
        }
        return truth.model_copy(update=overrides)


class GroundTruth(BaseModel):
    """Everything the generator knows that the panel does not show."""

    seed: int
    effects: Dict[str, Dict[str, float]]
    effect_industries: Optional[List[int]] = None
    selection_intercept: Optional[float] = None
    treated_ids: List[str]
    propensity: Dict[str, float]
    industry: Dict[str, int]
    years: List[int]
    inefficiency: Dict[str, List[float]]

    def effect(self, outcome: str, phase: str) -> float:
        return self.effects.get(outcome, {}).get(phase, 0.0)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        return cls.model_validate_json(text)


class _Firm(BaseModel):
    """Untreated draws of one firm."""

    model_config = {"arbitrary_types_allowed": True}

    firm_id: str
    industry: int
    ln_x: np.ndarray
    ln_y: np.ndarray
    inefficiency: np.ndarray
    mix: np.ndarray
    co2_noise: np.ndarray
    export_share: float
    wages: np.ndarray


def _inefficiency(u: np.ndarray, truth: IndustryTruth) -> np.ndarray:
    if truth.sigma_v == 0:
        return np.zeros_like(u)
    mu = truth.mu_v if truth.inefficiency is Inefficiency.TRUNCATED_NORMAL else 0.0
    a = -mu / truth.sigma_v
    return stats.truncnorm.ppf(u, a, np.inf, loc=mu, scale=truth.sigma_v)


def _draw_firm(
    index: int,
    stream: np.random.SeedSequence,
    cfg: SynthConfig,
    codes: List[int],
    probs: np.ndarray,
) -> _Firm:
    rng = np.random.Generator(np.random.PCG64(stream))
    years = np.arange(cfg.years[0], cfg.years[1] + 1)
    n = len(years)
    code = codes[int(rng.choice(len(codes), p=probs))]
    truth = cfg.truth(code)

    ln_l0 = rng.normal(3.8, 1.1)
    ln_k0 = ln_l0 + rng.normal(3.6, 0.5)
    ln_e0 = ln_l0 + rng.normal(3.0, 0.8)
    growth = rng.normal(0.01, 0.02, size=3)
    shocks = rng.normal(0.0, 0.05, size=(n, 3))
    ln_x = np.array([ln_k0, ln_l0, ln_e0]) + np.outer(years - years[0], growth) + shocks

    noise = truth.sigma_u * rng.standard_normal(n)
    w = _inefficiency(rng.random(n), truth)
    crisis = np.where(years == cfg.crisis_year, math.log1p(-truth.crisis_drop), 0.0)
    ln_y = truth.constant + ln_x @ np.array(truth.elasticities) - w + noise + crisis

    mix = rng.dirichlet(FUEL_MIX_ALPHA)
    co2_noise = rng.normal(0.0, 0.05, size=n)
    exporter = rng.random() < EXPORTER_SHARE
    share = rng.beta(2.0, 3.0)
    wage0 = rng.normal(math.log(35000.0), 0.25)
    return _Firm(
        firm_id=f"F{index:05d}",
        industry=code,
        ln_x=ln_x,
        ln_y=ln_y,
        inefficiency=w,
        mix=mix,
        co2_noise=co2_noise,
        export_share=share if exporter else 0.0,
        wages=np.exp(wage0 + 0.02 * (years - years[0])),
    )


def _emissions(
    energy: np.ndarray, mix: np.ndarray, noise: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    parts = np.outer(energy, mix)
    factors = np.array([EMISSION_FACTORS[c] for c in ENERGY_COMPONENTS])
    return parts, parts @ factors * np.exp(noise)


def _assign(firms: List[_Firm], cfg: SynthConfig, stream: np.random.SeedSequence):
    """Probit selection on base-year ln output and ln emission intensity."""
    rng = np.random.Generator(np.random.PCG64(stream))
    draws = rng.random(len(firms))
    if cfg.treated_share == 0:
        return np.zeros(len(firms)), np.zeros(len(firms), dtype=bool), None
    t = cfg.base_year - cfg.years[0]
    factors = np.array([EMISSION_FACTORS[c] for c in ENERGY_COMPONENTS])
    ln_output = np.array([f.ln_y[t] for f in firms])
    ln_co2 = np.array(
        [f.ln_x[t, 2] + math.log(f.mix @ factors) + f.co2_noise[t] for f in firms]
    )

    def standardized(x: np.ndarray) -> np.ndarray:
        sd = x.std()
        return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)

    index = cfg.selection_size * standardized(ln_output)
    index += cfg.selection_dirty * standardized(ln_co2 - ln_output)

    def excess_share(c: float) -> float:
        return stats.norm.cdf(c + index).mean() - cfg.treated_share

    intercept = optimize.brentq(excess_share, -40.0, 40.0, xtol=1e-12)
    propensity = stats.norm.cdf(intercept + index)
    return propensity, draws < propensity, float(intercept)


def _rows(
    firm: _Firm, treated: bool, cfg: SynthConfig, windows: PhaseWindows
) -> pd.DataFrame:
    years = np.arange(cfg.years[0], cfg.years[1] + 1)
    ln_x = firm.ln_x.copy()
    ln_y = firm.ln_y.copy()
    shift = {outcome: np.zeros(len(years)) for outcome in EFFECT_OUTCOMES}
    targeted = cfg.effect_industries is None or firm.industry in cfg.effect_industries
    if treated and targeted:
        labels = [windows.phase_of(int(y)) for y in years]
        for outcome, phases in cfg.effects.items():
            shift[outcome] = np.array(
                [phases.get(label, 0.0) if label else 0.0 for label in labels]
            )
    ln_y = ln_y + shift["output"] - shift["distance"]

    output = np.exp(ln_y)
    capital = np.exp(ln_x[:, 0] + shift["capital"])
    employees = np.exp(ln_x[:, 1] + shift["employees"])
    energy = np.exp(ln_x[:, 2] + shift["energy_total"])
    parts, co2 = _emissions(energy, firm.mix, firm.co2_noise)
    co2 = co2 * np.exp(shift["co2"])
    exports = np.minimum(firm.export_share * output * np.exp(shift["exports"]), output)

    frame = pd.DataFrame(
        {
            "firm_id": firm.firm_id,
            "year": years,
            "industry": firm.industry,
            "treated": int(treated),
            "output": output,
            "exports": exports,
            "employees": employees,
            "avg_wage": firm.wages,
            "capital": capital,
            "energy_total": energy,
            "co2": co2,
        }
    )
    for j, component in enumerate(ENERGY_COMPONENTS):
        frame[component] = parts[:, j]
    return frame[PANEL_COLUMNS]


def generate(cfg: SynthConfig, n_jobs: int = 1) -> Tuple[PanelDataset, GroundTruth]:
    """
    Simulate a panel and its ground truth.

    Deterministic in ``cfg.seed`` and independent of ``n_jobs``.
    Raises:
        UnknownVariableError / ConfigError: invalid config.
    """
    cfg.check()
    codes = sorted(cfg.industries)
    weights = np.array([cfg.industries[c].weight for c in codes], dtype=float)
    probs = weights / weights.sum()
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_firms + 1)

    def draw(index: int) -> _Firm:
        return _draw_firm(index, streams[index], cfg, codes, probs)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            firms = list(pool.map(draw, range(cfg.n_firms)))
    else:
        firms = [draw(i) for i in range(cfg.n_firms)]

    propensity, treated, intercept = _assign(firms, cfg, streams[-1])
    windows = PhaseWindows(panel_start=cfg.years[0], panel_end=cfg.years[1])
    frontier_windows = PhaseWindows.for_frontier()
    frame = pd.concat(
        [_rows(f, bool(d), cfg, frontier_windows) for f, d in zip(firms, treated)],
        ignore_index=True,
    )
    ds = PanelDataset.from_frame(frame, windows=windows)
    truth = GroundTruth(
        seed=cfg.seed,
        effects={k: dict(v) for k, v in cfg.effects.items()},
        effect_industries=cfg.effect_industries,
        selection_intercept=intercept,
        treated_ids=[f.firm_id for f, d in zip(firms, treated) if d],
        propensity={f.firm_id: float(p) for f, p in zip(firms, propensity)},
        industry={f.firm_id: f.industry for f in firms},
        years=list(range(cfg.years[0], cfg.years[1] + 1)),
        inefficiency={f.firm_id: f.inefficiency.tolist() for f in firms},
    )
    logger.info(
        "Generated %d firms (%d treated) over %d-%d",
        cfg.n_firms,
        len(truth.treated_ids),
        *cfg.years,
    )
    return ds, truth


# --- Presets ---


def _null(seed: int) -> SynthConfig:
    return SynthConfig(n_firms=1000, treated_share=0.1, seed=seed)


def _table3_phase2(seed: int) -> SynthConfig:
    return SynthConfig(
        n_firms=5000,
        treated_share=0.08,
        effects={"co2": {"PhaseII": -0.25}, "output": {"PhaseII": 0.05}},
        seed=seed,
    )


def _paper_industry(seed: int) -> SynthConfig:
    return SynthConfig(
        n_firms=4000,
        treated_share=0.2,
        industries={code: IndustryTruth.from_published(code) for code in (17, 20)},
        sigma_u=0.05,
        sigma_v=0.15,
        effects={"distance": {"PhaseI": -0.03, "PhaseII": -0.03}},
        effect_industries=[17],
        seed=seed,
    )


def _high_selection(seed: int) -> SynthConfig:
    return SynthConfig(
        n_firms=1000,
        treated_share=0.1,
        selection_size=1.5,
        selection_dirty=1.5,
        seed=seed,
    )


PRESETS = {
    "null": _null,
    "table3_phase2": _table3_phase2,
    "paper_industry": _paper_industry,
    "high_selection": _high_selection,
}


def preset(name: str, seed: int = 1) -> SynthConfig:
    """
    Named scenario configs.

    - ``null``: 1,000 firms, 10% treated, no effects.
    - ``table3_phase2``: 5,000 firms, 8% treated, ln CO2 -0.25 and ln output
      +0.05 in Phase II.
    - ``paper_industry``: industries 17 and 20, low noise, distance -0.03 in
      both phases for treated firms of industry 17 only.
    - ``high_selection``: strong selection on size and intensity, no effects.

    Raises:
        UnknownPresetError: unknown name.
    """
    if name not in PRESETS:
        raise UnknownPresetError(name, PRESETS)
    return PRESETS[name](seed)


__all__ = [
    "EFFECT_OUTCOMES",
    "IndustryTruth",
    "SynthConfig",
    "GroundTruth",
    "generate",
    "PRESETS",
    "preset",
]
