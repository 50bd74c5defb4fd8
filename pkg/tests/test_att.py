import numpy as np
import pandas as pd
import pytest

from ets_effects.att import (
    att_table,
    bootstrap_se,
    contrast_se,
    did_matching_att,
    matched_contrasts,
    reweighted_ols_att,
)
from ets_effects.constants import MatchScheme, Pooling, SeMethod
from ets_effects.errors import ConfigError, InsufficientDataError, UnknownFirmError
from ets_effects.matching import MatchPair, MatchWeights, nn_match, reweight
from ets_effects.panel import log_change
from ets_effects.panel_models import PhaseWindow
from ets_effects.propensity import score_panel


@pytest.fixture
def nn_weights():
    return MatchWeights(
        scheme=MatchScheme.NN,
        neighbors=2,
        treated_ids=["T1", "T2"],
        pairs=[
            MatchPair(treated_id="T1", control_id="C1", weight=0.5),
            MatchPair(treated_id="T1", control_id="C2", weight=0.5),
            MatchPair(treated_id="T2", control_id="C2", weight=0.5),
            MatchPair(treated_id="T2", control_id="C3", weight=0.5),
        ],
    )


@pytest.fixture
def rw_weights():
    return MatchWeights(
        scheme=MatchScheme.REWEIGHT,
        treated_ids=["T1", "T2"],
        control_weights={"C1": 0.5, "C2": 1.0, "C3": 2.0},
    )


# --- Matching estimator ---


def test_did_matching_att_by_hand(att_panel, nn_weights):
    # T1: 0.6 - (0.1 + 0.3) / 2 = 0.4; T2: C3 has no change, so 0.2 - 0.3 = -0.1
    result = did_matching_att(att_panel, nn_weights, "output", pre_year=2004)
    assert result.estimate == pytest.approx(0.15)
    assert result.window == "PhaseI"
    assert result.estimator == "NN(1:2)"
    assert result.n_treated == 2
    assert result.n_controls == 2
    assert result.n_dropped == 0


def test_contrast_totals_renormalize(att_panel, nn_weights):
    deltas = log_change(att_panel, "output", 2004, att_panel.windows.phase1)
    contrasts = matched_contrasts(deltas, nn_weights)
    assert contrasts.control_totals == {
        "C1": pytest.approx(0.5),
        "C2": pytest.approx(1.5),
    }
    assert contrasts.contrasts == pytest.approx([0.4, -0.1])


def test_contrast_se_is_hc1(att_panel, nn_weights):
    deltas = log_change(att_panel, "output", 2004, att_panel.windows.phase1)
    contrasts = matched_contrasts(deltas, nn_weights)

    y = np.array([0.6, 0.2, 0.1, 0.3])
    d = np.array([1.0, 1.0, 0.0, 0.0])
    w = np.array([1.0, 1.0, 0.5, 1.5])
    X = np.column_stack([np.ones(4), d])
    bread = np.linalg.inv(X.T @ (X * w[:, None]))
    beta = bread @ X.T @ (w * y)
    e = y - X @ beta
    meat = (X * (w * e)[:, None]).T @ (X * (w * e)[:, None])
    cov = 4 / (4 - 2) * bread @ meat @ bread

    assert beta[1] == pytest.approx(contrasts.estimate)
    assert contrast_se(contrasts) == pytest.approx(np.sqrt(cov[1, 1]))


def test_treated_without_change_is_dropped(att_panel, nn_weights):
    window = PhaseWindow(label="late", start=2007, end=2007)
    # T2 has no 2006 value
    only_2006 = PhaseWindow(label="2006", start=2006, end=2006)
    result = did_matching_att(att_panel, nn_weights, "output", 2004, only_2006)
    assert result.n_treated == 1
    assert result.n_dropped == 1
    late = did_matching_att(att_panel, nn_weights, "output", 2004, window)
    assert late.n_dropped == 0


def test_no_contributing_treated_unit(att_panel, nn_weights):
    with pytest.raises(InsufficientDataError):
        did_matching_att(att_panel, nn_weights, "exports", 2004)


def test_unknown_firm(att_panel):
    weights = MatchWeights(
        scheme=MatchScheme.NN,
        neighbors=1,
        treated_ids=["T1"],
        pairs=[MatchPair(treated_id="T1", control_id="C9", weight=1.0)],
    )
    with pytest.raises(UnknownFirmError) as exc:
        did_matching_att(att_panel, weights, "output")
    assert exc.value.details["firm_ids"] == ["C9"]


def test_bootstrap_se_is_seeded(att_panel, nn_weights):
    deltas = log_change(att_panel, "output", 2004, att_panel.windows.phase1)
    contrasts = matched_contrasts(deltas, nn_weights)
    first = bootstrap_se(contrasts, n_boot=200, seed=3)
    assert first == bootstrap_se(contrasts, n_boot=200, seed=3)
    assert first > 0
    result = did_matching_att(
        att_panel, nn_weights, "output", se_method=SeMethod.BOOTSTRAP, n_boot=50
    )
    assert result.se_method == "bootstrap"


WINDOW = PhaseWindow(label="PhaseI", start=2005, end=2007)


def firm_change(case, firm, pre_year=2004, years=(2005, 2006, 2007)):
    mean = sum(case.logs[firm][y] for y in years) / len(years)
    return mean - case.logs[firm][pre_year]


def brute_force_att(case, neighbors):
    effects = []
    for i, chosen in neighbors.items():
        counterfactual = 0.0
        for k in chosen:
            counterfactual += firm_change(case, k) / len(chosen)
        effects.append(firm_change(case, i) - counterfactual)
    return sum(effects) / len(effects)


def test_did_matching_att_equals_brute_force(random_case, random_neighbors):
    weights = nn_match(random_case.scored, random_case.m)
    result = did_matching_att(
        random_case.ds, weights, "output", pre_year=2004, window=WINDOW
    )
    assert result.estimate == pytest.approx(
        brute_force_att(random_case, random_neighbors), abs=1e-10
    )
    assert result.n_treated == len(random_neighbors)


def test_reweighting_att_equals_brute_force(random_case):
    case = random_case
    numerator = denominator = 0.0
    for k, d in case.treated.items():
        if d == 0:
            odds = case.propensity[k] / (1 - case.propensity[k])
            numerator += odds * firm_change(case, k)
            denominator += odds
    treated = [f for f, d in case.treated.items() if d == 1]
    expected = sum(firm_change(case, i) for i in treated) / len(treated)
    expected -= numerator / denominator

    result = did_matching_att(case.ds, reweight(case.scored), "output", 2004, WINDOW)
    assert result.estimate == pytest.approx(expected, abs=1e-10)


# --- Reweighted OLS ---


def test_reweighted_ols_is_weighted_mean_difference(att_panel, rw_weights):
    result = reweighted_ols_att(att_panel, rw_weights, "output", pre_year=2004)
    # C3 has no change, so only C1 (0.5) and C2 (1.0) remain
    expected = (0.6 + 0.2) / 2 - (0.5 * 0.1 + 1.0 * 0.3) / 1.5
    assert result.estimate == pytest.approx(expected)
    assert result.estimator == "OLS-w/R"
    assert result.n_controls == 2


def test_matching_and_ols_agree_for_reweighting(att_panel, rw_weights):
    ols = reweighted_ols_att(att_panel, rw_weights, "output", pre_year=2004)
    matched = did_matching_att(att_panel, rw_weights, "output", pre_year=2004)
    assert matched.estimate == pytest.approx(ols.estimate)


def test_reweighted_ols_with_covariates_matches_lstsq(synth_panel):
    ds, _ = synth_panel
    scored = score_panel(ds, ["level:output", "level:co2"], 2003, (2002, 2003)).scored
    weights = reweight(scored)
    covariates = pd.DataFrame(
        {"size": ds.wide("ln_output")[2003], "wage": ds.wide("ln_avg_wage")[2003]}
    )
    result = reweighted_ols_att(ds, weights, "co2", covariates=covariates)

    treated = set(weights.treated_ids)
    unit_weight = {**{t: 1.0 for t in treated}, **weights.control_weights}
    deltas = log_change(ds, "co2", 2004, ds.windows.phase1).reindex(sorted(unit_weight))
    keep = deltas.notna() & covariates.reindex(deltas.index).notna().all(axis=1)
    deltas = deltas[keep]
    w = np.array([unit_weight[f] for f in deltas.index])
    X = np.column_stack(
        [
            np.ones(len(deltas)),
            [1.0 if f in treated else 0.0 for f in deltas.index],
            covariates.reindex(deltas.index).to_numpy(),
        ]
    )
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], deltas.to_numpy() * sw, rcond=None)
    assert result.estimate == pytest.approx(beta[1], rel=1e-8, abs=1e-10)


def test_stacked_pooling_clusters_by_firm(att_panel, rw_weights):
    result = reweighted_ols_att(
        att_panel, rw_weights, "output", pooling=Pooling.STACKED
    )
    assert result.se_method == "cluster"
    one_year = PhaseWindow.single_year(2005)
    single = reweighted_ols_att(
        att_panel, rw_weights, "output", window=one_year, pooling="stacked"
    )
    assert single.se_method == "sandwich"


def test_reweighted_ols_needs_reweighting(att_panel, nn_weights):
    with pytest.raises(ConfigError):
        reweighted_ols_att(att_panel, nn_weights, "output")


# --- Grid ---


def test_att_table_records_failures(att_panel, nn_weights, rw_weights):
    windows = [att_panel.windows.phase1, PhaseWindow.single_year(2005)]
    grid = att_table(
        att_panel, ["output", "exports"], [nn_weights, rw_weights], windows
    )

    assert len(grid.cells) == 8
    assert len(grid.failed) == 4
    assert all(cell.outcome == "exports" for cell in grid.failed)
    assert "InsufficientDataError" in grid.failed[0].error
    cell = grid.get("output", "PhaseI", "NN(1:2)")
    assert cell.result.estimate == pytest.approx(0.15)

    frame = grid.to_frame()
    assert list(frame["status"]).count("failed") == 4
    assert frame.loc[frame["status"] == "ok", "se"].notna().all()


def test_att_table_thread_count_does_not_change_results(synth_panel):
    ds, _ = synth_panel
    scored = score_panel(ds, ["level:output", "level:co2"], 2003, (2002, 2003)).scored
    weight_sets = [nn_match(scored, 1), nn_match(scored, 5), reweight(scored)]
    windows = ds.windows.phases()
    outcomes = ["co2", "output"]
    serial = att_table(ds, outcomes, weight_sets, windows, n_jobs=1).to_frame()
    threaded = att_table(ds, outcomes, weight_sets, windows, n_jobs=4).to_frame()
    pd.testing.assert_frame_equal(serial, threaded)
