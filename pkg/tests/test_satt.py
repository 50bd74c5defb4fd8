import numpy as np
import pandas as pd
import pytest

from ets_effects.config import RunConfig
from ets_effects.constants import MatchScheme
from ets_effects.errors import DataError, InsufficientDataError
from ets_effects.frontier import EfficiencyScore
from ets_effects.matching import MatchPair, MatchWeights, nn_match
from ets_effects.panel_models import PanelDataset, PhaseWindow
from ets_effects.pipeline import PipelineRunner
from ets_effects.satt import (
    distance_table,
    industry_subset_satt,
    satt_phase,
    satt_table,
    satt_year,
)

DISTANCES = {
    "T1": {2003: 0.30, 2005: 0.20, 2006: 0.10},
    "T2": {2003: 0.40, 2005: 0.35, 2006: 0.30},
    "C1": {2003: 0.20, 2005: 0.25, 2006: 0.20},
    "C2": {2003: 0.30, 2005: 0.30, 2006: 0.30},
}
INDUSTRY = {"T1": 17, "T2": 20, "C1": 17, "C2": 20}
PHASE = PhaseWindow(label="PhaseI", start=2005, end=2006)


@pytest.fixture
def panel():
    rows = [
        {
            "firm_id": f,
            "year": y,
            "industry": INDUSTRY[f],
            "treated": int(f.startswith("T")),
        }
        for f in DISTANCES
        for y in (2003, 2005, 2006)
    ]
    return PanelDataset.from_frame(pd.DataFrame(rows))


@pytest.fixture
def scores():
    return [
        EfficiencyScore(firm_id=f, year=y, distance=d)
        for f, by_year in DISTANCES.items()
        for y, d in by_year.items()
    ]


def nn(m, pairs):
    return MatchWeights(
        scheme=MatchScheme.NN,
        neighbors=m,
        treated_ids=sorted({t for t, _, _ in pairs}),
        pairs=[MatchPair(treated_id=t, control_id=c, weight=w) for t, c, w in pairs],
    )


@pytest.fixture
def one_to_one():
    return nn(1, [("T1", "C1", 1.0), ("T2", "C2", 1.0)])


@pytest.fixture
def one_to_two():
    return nn(
        2, [("T1", "C1", 0.5), ("T1", "C2", 0.5), ("T2", "C1", 0.5), ("T2", "C2", 0.5)]
    )


def test_distance_table(scores):
    missing = EfficiencyScore(firm_id="C3", year=2003, reason="missing")
    table = distance_table(scores + [missing])
    assert table.loc["T1", 2005] == 0.20
    assert np.isnan(table.loc["C3", 2003])


def test_satt_year_by_hand(scores, panel, one_to_one):
    # T1: -0.10 - 0.05; T2: -0.05 - 0.00
    result = satt_year(scores, panel, one_to_one, 2005, base_year=2003)
    assert result.estimate == pytest.approx(-0.10)
    assert result.estimate_pct == pytest.approx(-10.0)
    assert result.window == "2005"
    assert result.neighbors == 1
    assert result.n_treated == 2


def test_satt_phase_averages_years(scores, panel, one_to_one):
    # T1: -0.15 - 0.025; T2: -0.075 - 0.0
    result = satt_phase(scores, panel, one_to_one, PHASE, base_year=2003)
    assert result.estimate == pytest.approx(-0.125)
    assert result.window == "PhaseI"


def test_industry_subset(scores, panel, one_to_one):
    result = industry_subset_satt(
        scores, panel, one_to_one, PHASE, industry=17, base_year=2003
    )
    assert result.industry == 17
    assert result.n_treated == 1
    assert result.estimate == pytest.approx(-0.175)
    with pytest.raises(InsufficientDataError):
        industry_subset_satt(
            scores, panel, one_to_one, PHASE, industry=24, base_year=2003
        )


def test_missing_base_year(scores, panel, one_to_one):
    with pytest.raises(DataError):
        satt_year(scores, panel, one_to_one, 2005, base_year=2004)


def test_satt_table_skips_base_year(scores, panel, one_to_one, one_to_two):
    table = satt_table(
        scores,
        panel,
        [one_to_one, one_to_two],
        years=[2003, 2005, 2006],
        phases=[PHASE],
        base_year=2003,
    )
    frame = table.to_frame()
    assert list(dict.fromkeys(frame["window"])) == ["2005", "2006", "PhaseI"]
    assert len(frame) == 6
    assert (frame["status"] == "ok").all()
    assert table.get("2005", 1).result.estimate == pytest.approx(-0.10)

    wide = table.wide()
    assert list(wide.index) == ["2005", "2006", "PhaseI"]
    assert list(wide.columns) == [1, 2]
    assert wide.loc["2005", 1] == pytest.approx(-10.0)


def brute_force_satt(case, neighbors, years, base_year=2003):
    def change(firm):
        level = sum(case.distance[firm][y] for y in years) / len(years)
        return level - case.distance[firm][base_year]

    effects = []
    for i, chosen in neighbors.items():
        counterfactual = 0.0
        for k in chosen:
            counterfactual += change(k) / len(chosen)
        effects.append(change(i) - counterfactual)
    return sum(effects) / len(effects)


def test_satt_equals_brute_force(random_case, random_neighbors):
    case = random_case
    scores = [
        EfficiencyScore(firm_id=f, year=y, distance=d)
        for f, by_year in case.distance.items()
        for y, d in by_year.items()
    ]
    weights = nn_match(case.scored, case.m)

    by_year = satt_year(scores, case.ds, weights, 2006, base_year=2003)
    assert by_year.estimate == pytest.approx(
        brute_force_satt(case, random_neighbors, [2006]), abs=1e-10
    )
    phase = PhaseWindow(label="PhaseI", start=2005, end=2007)
    by_phase = satt_phase(scores, case.ds, weights, phase, base_year=2003)
    assert by_phase.estimate == pytest.approx(
        brute_force_satt(case, random_neighbors, [2005, 2006, 2007]), abs=1e-10
    )


def test_significance_flag():
    rng = np.random.default_rng(9)
    firms = [f"T{i:02d}" for i in range(30)] + [f"C{i:02d}" for i in range(30)]
    rows, scores = [], []
    for firm in firms:
        treated = firm.startswith("T")
        rows += [
            {"firm_id": firm, "year": y, "industry": 17, "treated": int(treated)}
            for y in (2003, 2005)
        ]
        start = 0.3 + rng.normal(0, 0.01)
        moved = start + (-0.1 if treated else 0.0) + rng.normal(0, 0.01)
        scores += [
            EfficiencyScore(firm_id=firm, year=2003, distance=start),
            EfficiencyScore(firm_id=firm, year=2005, distance=moved),
        ]
    ds = PanelDataset.from_frame(pd.DataFrame(rows))
    weights = nn(1, [(f"T{i:02d}", f"C{i:02d}", 1.0) for i in range(30)])
    result = satt_year(scores, ds, weights, 2005, base_year=2003)
    assert result.estimate == pytest.approx(-0.1, abs=0.02)
    assert result.significant
    assert result.stars


@pytest.mark.slow
def test_distance_effect_recovered_in_regulated_industry(tmp_path):
    cfg = RunConfig(
        preset="paper_industry", seed=2, satt_industry=17, output_dir=str(tmp_path)
    )
    runner = PipelineRunner(cfg)
    table = runner.satt()
    cell = next(
        c for c in table.cells if c.window == "PhaseII" and c.result is not None
    )
    assert cell.result.estimate == pytest.approx(-0.03, abs=0.02)
