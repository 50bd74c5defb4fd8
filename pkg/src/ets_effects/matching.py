"""
Counterfactual weights.

``nn_match`` gives each treated unit its ``m`` nearest controls on the
propensity score, with replacement, each weighted ``1/m``. Candidates are
ordered by (distance, firm_id), so ties resolve to the lexicographically
smallest firm id. ``reweight`` gives every control ``p / (1 - p)`` and
every treated unit weight one.
"""

import bisect
import logging
from collections import Counter, defaultdict
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from ets_effects.constants import DistanceScale, MatchScheme
from ets_effects.errors import ConfigError, DataError, WeightOverflowError
from ets_effects.propensity import ScoredUnit

logger = logging.getLogger(__name__)

# Propensities this close to one make p / (1 - p) meaningless.
OVERFLOW_MARGIN = 1e-12


class MatchPair(BaseModel):
    treated_id: str
    control_id: str
    weight: float
    distance: Optional[float] = None


class MatchWeights(BaseModel):
    """
    Counterfactual weights W(i, k) for the treated units.

    Attributes:
        scheme (MatchScheme): ``nn`` or ``reweight``.
        neighbors (Optional[int]): m for NN(1:m).
        treated_ids (list[str]): Treated units carried by the weights.
        pairs (list[MatchPair]): NN entries; each treated unit's weights sum to one.
        control_weights (dict[str, float]): Reweighting weights p/(1-p).
        unmatched (list[str]): Treated units without a control in their stratum.
        distance_scale (str): ``probability`` or ``index``.
    """

    scheme: MatchScheme
    neighbors: Optional[int] = None
    treated_ids: List[str]
    pairs: List[MatchPair] = []
    control_weights: Dict[str, float] = {}
    unmatched: List[str] = []
    distance_scale: str = DistanceScale.PROBABILITY.value

    @property
    def label(self) -> str:
        if self.scheme is MatchScheme.NN:
            return f"NN(1:{self.neighbors})"
        return "OLS-w/R"

    def by_treated(self) -> Dict[str, List[MatchPair]]:
        grouped: Dict[str, List[MatchPair]] = defaultdict(list)
        for pair in self.pairs:
            grouped[pair.treated_id].append(pair)
        return dict(grouped)

    def counterfactual(self, treated_id: str) -> Dict[str, float]:
        """Control weights forming ``treated_id``'s counterfactual (sum to one)."""
        if self.scheme is MatchScheme.NN:
            pairs = self.by_treated().get(treated_id, [])
            return {p.control_id: p.weight for p in pairs}
        total = sum(self.control_weights.values())
        return {k: w / total for k, w in self.control_weights.items()}

    def control_totals(self) -> Dict[str, float]:
        """Aggregate weight of every control with positive weight."""
        if self.scheme is MatchScheme.NN:
            totals: Dict[str, float] = defaultdict(float)
            for pair in self.pairs:
                totals[pair.control_id] += pair.weight
            return {k: v for k, v in sorted(totals.items()) if v > 0}
        return {k: w for k, w in sorted(self.control_weights.items()) if w > 0}

    def referenced_firms(self) -> List[str]:
        firms = set(self.treated_ids) | set(self.control_weights)
        firms |= {p.control_id for p in self.pairs}
        return sorted(firms)

    def restricted(self, treated_ids: Sequence[str]) -> "MatchWeights":
        """Same weights for a subset of the treated units."""
        keep = set(treated_ids)
        return self.model_copy(
            update={
                "treated_ids": [t for t in self.treated_ids if t in keep],
                "pairs": [p for p in self.pairs if p.treated_id in keep],
            }
        )

    def to_frame(self) -> pd.DataFrame:
        """Weights table: treated_id, control_id, weight, distance."""
        if self.scheme is MatchScheme.NN:
            rows = [p.model_dump() for p in self.pairs]
        else:
            rows = [
                {"treated_id": "", "control_id": k, "weight": w, "distance": None}
                for k, w in sorted(self.control_weights.items())
            ]
        columns = ["treated_id", "control_id", "weight", "distance"]
        return pd.DataFrame(rows, columns=columns)


def _key(unit: ScoredUnit, scale: DistanceScale) -> float:
    return unit.propensity if scale is DistanceScale.PROBABILITY else unit.index


class _ControlPool:
    """Controls grouped by distinct score, ascending, firm ids sorted within."""

    def __init__(self, controls: Sequence[ScoredUnit], scale: DistanceScale):
        grouped: Dict[float, List[str]] = defaultdict(list)
        for unit in controls:
            grouped[_key(unit, scale)].append(unit.firm_id)
        self.values = sorted(grouped)
        self.groups = [sorted(grouped[v]) for v in self.values]
        self.size = len(controls)

    def nearest(self, value: float, m: int) -> List[Tuple[str, float]]:
        """The m nearest controls ordered by (distance, firm_id)."""
        right = bisect.bisect_left(self.values, value)
        left = right - 1
        picked: List[Tuple[str, float]] = []
        while len(picked) < m and (left >= 0 or right < len(self.values)):
            dl = value - self.values[left] if left >= 0 else np.inf
            dr = self.values[right] - value if right < len(self.values) else np.inf
            d = min(dl, dr)
            candidates: List[str] = []
            if dl == d:
                candidates.extend(self.groups[left])
                left -= 1
            if dr == d:
                candidates.extend(self.groups[right])
                right += 1
            candidates.sort()
            picked.extend((firm, float(d)) for firm in candidates[: m - len(picked)])
        return picked


def nn_match(
    scored: Sequence[ScoredUnit],
    m: int,
    scale: Union[DistanceScale, str] = DistanceScale.PROBABILITY,
    exact_on: Optional[Mapping[str, Hashable]] = None,
) -> MatchWeights:
    """
    Nearest-neighbour matching with replacement.

    Arguments:
        scored: Treated and control units with scores.
        m: Neighbours per treated unit.
        scale: Distance on the probability (default) or probit-index scale.
        exact_on: Optional firm -> stratum map; matches stay within strata.
    Returns:
        MatchWeights with ``min(m, pool size)`` entries of ``1/k`` per treated unit.
    Raises:
        ConfigError: m < 1.
        DataError: no control units.
    """
    if m < 1:
        raise ConfigError("Neighbour count must be at least 1", neighbors=m)
    scale = DistanceScale(scale)
    treated = sorted((u for u in scored if u.treated == 1), key=lambda u: u.firm_id)
    controls = [u for u in scored if u.treated == 0]
    if not controls:
        raise DataError("No control units to match against")

    if exact_on is None:
        pools = {None: _ControlPool(controls, scale)}
    else:
        strata: Dict[Hashable, List[ScoredUnit]] = defaultdict(list)
        for unit in controls:
            strata[exact_on.get(unit.firm_id)].append(unit)
        pools = {s: _ControlPool(units, scale) for s, units in strata.items()}

    pairs: List[MatchPair] = []
    matched: List[str] = []
    unmatched: List[str] = []
    for unit in treated:
        stratum = None if exact_on is None else exact_on.get(unit.firm_id)
        pool = pools.get(stratum)
        if pool is None or pool.size == 0:
            unmatched.append(unit.firm_id)
            continue
        neighbours = pool.nearest(_key(unit, scale), m)
        weight = 1.0 / len(neighbours)
        matched.append(unit.firm_id)
        pairs.extend(
            MatchPair(treated_id=unit.firm_id, control_id=k, weight=weight, distance=d)
            for k, d in neighbours
        )
    if unmatched:
        logger.warning(
            "%d treated unit(s) have no control in their stratum", len(unmatched)
        )
    if not matched:
        raise DataError("No treated unit could be matched")
    return MatchWeights(
        scheme=MatchScheme.NN,
        neighbors=m,
        treated_ids=matched,
        pairs=pairs,
        unmatched=unmatched,
        distance_scale=scale.value,
    )


def reweight(scored: Sequence[ScoredUnit], normalize: bool = False) -> MatchWeights:
    """
    Propensity reweighting: controls get ``p / (1 - p)``, treated units one.

    With ``normalize`` the control weights are rescaled to sum to the
    number of treated units; raw weights by default.
    Raises:
        WeightOverflowError: a control propensity is numerically one.
    """
    treated = sorted(u.firm_id for u in scored if u.treated == 1)
    controls = sorted((u for u in scored if u.treated == 0), key=lambda u: u.firm_id)
    if not controls:
        raise DataError("No control units to reweight")
    overflow = [u.firm_id for u in controls if 1.0 - u.propensity <= OVERFLOW_MARGIN]
    if overflow:
        raise WeightOverflowError(
            "Control propensity numerically equal to one", firm_ids=overflow[:20]
        )
    weights = {u.firm_id: u.propensity / (1.0 - u.propensity) for u in controls}
    if normalize and treated:
        scale = len(treated) / sum(weights.values())
        weights = {k: w * scale for k, w in weights.items()}
    return MatchWeights(
        scheme=MatchScheme.REWEIGHT, treated_ids=treated, control_weights=weights
    )


class MatchDiagnostics(BaseModel):
    n_treated: int
    n_controls_used: int
    mean_distance: Optional[float] = None
    max_distance: Optional[float] = None
    reuse_counts: Dict[str, int] = {}

    @property
    def max_reuse(self) -> int:
        return max(self.reuse_counts.values(), default=0)


def match_quality(
    weights: MatchWeights, scored: Sequence[ScoredUnit]
) -> MatchDiagnostics:
    """
    Distances and control reuse of a set of weights.

    Distances are recomputed from ``scored`` on the weights' scale.
    """
    if not weights.treated_ids:
        raise DataError("Empty weights")
    scale = DistanceScale(weights.distance_scale)
    keys = {u.firm_id: _key(u, scale) for u in scored}
    if weights.scheme is MatchScheme.NN:
        distances = [
            abs(keys[p.treated_id] - keys[p.control_id]) for p in weights.pairs
        ]
        reuse = Counter(p.control_id for p in weights.pairs)
        return MatchDiagnostics(
            n_treated=len(weights.treated_ids),
            n_controls_used=len(reuse),
            mean_distance=float(np.mean(distances)) if distances else None,
            max_distance=float(np.max(distances)) if distances else None,
            reuse_counts=dict(sorted(reuse.items())),
        )
    used = weights.control_totals()
    return MatchDiagnostics(
        n_treated=len(weights.treated_ids),
        n_controls_used=len(used),
        reuse_counts={k: len(weights.treated_ids) for k in used},
    )


__all__ = [
    "MatchPair",
    "MatchWeights",
    "nn_match",
    "reweight",
    "MatchDiagnostics",
    "match_quality",
]
