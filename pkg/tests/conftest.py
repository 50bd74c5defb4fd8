import math
from types import SimpleNamespace
from typing import Dict, Optional

import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

from ets_effects.panel import derive_variables
from ets_effects.panel_models import PanelDataset
from ets_effects.propensity import ScoredUnit
from ets_effects.synthgen import SynthConfig, generate


def panel_from_logs(
    logs: Dict[str, Dict[int, Optional[float]]],
    treated: Dict[str, int],
    column: str = "output",
    industry: int = 17,
) -> PanelDataset:
    """Panel whose ``column`` holds exp(log value); None becomes a missing cell."""
    rows = []
    for firm, by_year in logs.items():
        for year, value in by_year.items():
            rows.append(
                {
                    "firm_id": firm,
                    "year": year,
                    "industry": industry,
                    "treated": treated[firm],
                    column: np.nan if value is None else math.exp(value),
                }
            )
    return PanelDataset.from_frame(pd.DataFrame(rows))


@pytest.fixture
def att_panel():
    """
    Two treated and three control firms; ln output changes between 2004 and
    the 2005-2007 mean are T1 0.6, T2 0.2, C1 0.1, C2 0.3, C3 undefined.
    """
    logs = {
        "T1": {2004: 1.0, 2005: 1.5, 2006: 1.6, 2007: 1.7},
        "T2": {2004: 2.0, 2005: 2.1, 2006: None, 2007: 2.3},
        "C1": {2004: 1.0, 2005: 1.1, 2006: 1.1, 2007: 1.1},
        "C2": {2004: 1.0, 2005: 1.3, 2006: 1.3, 2007: 1.3},
        "C3": {2004: None, 2005: 1.0, 2006: 1.0, 2007: 1.0},
    }
    treated = {"T1": 1, "T2": 1, "C1": 0, "C2": 0, "C3": 0}
    return panel_from_logs(logs, treated)


@pytest.fixture(scope="session")
def synth_panel():
    """A small simulated panel (derived variables included) and its truth."""
    cfg = SynthConfig(n_firms=400, treated_share=0.15, seed=7)
    ds, truth = generate(cfg)
    return derive_variables(ds, base_year=2003), truth


@pytest.fixture(params=range(25))
def random_case(request):
    """
    A random panel of 8 to 50 firms over 2003-2008 with log outputs,
    distances, propensity scores and a neighbour count. Firm F01-F03 are
    controls and F00 is treated, so both groups exist.
    """
    rng = np.random.default_rng(1000 + request.param)
    firms = [f"F{i:02d}" for i in range(int(rng.integers(8, 51)))]
    treated = {f: int(rng.random() < 0.35) for f in firms}
    treated.update({"F00": 1, "F01": 0, "F02": 0, "F03": 0})
    years = range(2003, 2009)
    logs = {f: {y: float(rng.normal(3.0, 0.5)) for y in years} for f in firms}
    distance = {f: {y: float(rng.uniform(0.0, 0.8)) for y in years} for f in firms}
    propensity = {f: float(rng.uniform(0.05, 0.95)) for f in firms}
    scored = [
        ScoredUnit(
            firm_id=f, propensity=p, treated=treated[f], index=float(norm.ppf(p))
        )
        for f, p in propensity.items()
    ]
    return SimpleNamespace(
        ds=panel_from_logs(logs, treated),
        treated=treated,
        logs=logs,
        distance=distance,
        propensity=propensity,
        scored=scored,
        m=int(rng.integers(1, 4)),
    )


@pytest.fixture
def random_neighbors(random_case) -> Dict[str, list]:
    """Each treated firm's m closest controls by an exhaustive search."""
    case = random_case
    controls = [f for f, d in case.treated.items() if d == 0]
    chosen = {}
    for i, d in case.treated.items():
        if d == 1:
            p = case.propensity[i]
            ranked = sorted(controls, key=lambda k: (abs(p - case.propensity[k]), k))
            chosen[i] = ranked[: case.m]
    return chosen
