import numpy as np
import pandas as pd
import pytest
from scipy import stats

from ets_effects.constants import SupportRule
from ets_effects.errors import (
    ColumnMismatchError,
    ConfigError,
    InsufficientDataError,
    NoOverlapError,
    RankDeficiencyError,
    SeparationError,
)
from ets_effects.propensity import (
    PropensityModel,
    ScoredUnit,
    build_covariates,
    enforce_common_support,
    fit_probit,
    parse_support,
    predict,
    probit_terms,
    score_panel,
)


@pytest.fixture
def probit_data():
    rng = np.random.default_rng(11)
    n = 5000
    X = pd.DataFrame({"size": rng.normal(size=n), "dirt": rng.normal(size=n)})
    index = 0.3 + 0.8 * X["size"] - 0.5 * X["dirt"]
    d = (index + rng.normal(size=n) > 0).astype(int).to_numpy()
    return X, d


def unit(firm, p, treated, index=None):
    return ScoredUnit(
        firm_id=firm, propensity=p, treated=treated, index=p if index is None else index
    )


# --- Probit ---


def test_fit_probit_recovers_coefficients(probit_data):
    X, d = probit_data
    model = fit_probit(X, d)

    assert model.converged
    assert model.covariates == ["intercept", "size", "dirt"]
    coef = model.coef()
    assert coef["intercept"] == pytest.approx(0.3, abs=0.1)
    assert coef["size"] == pytest.approx(0.8, abs=0.1)
    assert coef["dirt"] == pytest.approx(-0.5, abs=0.1)
    assert all(se > 0 for se in model.std_errors)


def test_probit_gradient_vanishes_at_optimum(probit_data):
    X, d = probit_data
    model = fit_probit(X, d)
    design = np.column_stack([np.ones(len(X)), X.to_numpy()])
    ll, grad, _, _ = probit_terms(np.array(model.coefficients), design, d.astype(float))
    assert ll == pytest.approx(model.log_likelihood)
    assert np.abs(grad).max() < 1e-6


def test_intercept_only_probit_is_inverse_normal_of_share():
    d = np.array([1] * 37 + [0] * 263)
    model = fit_probit(pd.DataFrame(index=range(len(d))), d)
    assert model.covariates == ["intercept"]
    assert model.coefficients[0] == pytest.approx(stats.norm.ppf(37 / 300), abs=1e-8)


def test_probit_separation():
    X = pd.DataFrame({"x": [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0]})
    with pytest.raises(SeparationError):
        fit_probit(X, [0, 0, 0, 1, 1, 1])


def test_probit_rank_deficiency(probit_data):
    X, d = probit_data
    X = X.assign(copy=X["size"] * 2.0)
    with pytest.raises(RankDeficiencyError) as exc:
        fit_probit(X, d)
    assert exc.value.details["columns"]


def test_probit_too_few_observations():
    with pytest.raises(InsufficientDataError):
        fit_probit(pd.DataFrame({"x": [1.0, 2.0]}), [0, 1])


def test_predict(probit_data):
    X, d = probit_data
    model = fit_probit(X, d)
    scored = predict(model, X.iloc[:5], treated=d[:5])
    assert [u.firm_id for u in scored] == [str(i) for i in range(5)]
    assert all(0 < u.propensity < 1 for u in scored)
    with pytest.raises(ColumnMismatchError):
        predict(model, X[["size"]])


def test_model_yaml_round_trip(probit_data):
    X, d = probit_data
    model = fit_probit(X, d)
    assert PropensityModel.from_yaml(model.to_yaml()) == model


# --- Covariates ---


def test_build_covariates(synth_panel):
    ds, _ = synth_panel
    table, excluded = build_covariates(
        ds,
        ["level:output", "trend:co2", "raw:export_share", "industry"],
        2003,
        (2002, 2003),
    )
    assert excluded == []
    assert table.index.tolist() == ds.firm_ids()
    dummies = [c for c in table.columns if c.startswith("industry:")]
    assert dummies
    assert set(table[dummies].to_numpy().ravel()) <= {0.0, 1.0}


def test_build_covariates_unknown_token(synth_panel):
    ds, _ = synth_panel
    with pytest.raises(ConfigError):
        build_covariates(ds, ["log:output"], 2003, (2002, 2003))


def test_score_panel(synth_panel):
    ds, _ = synth_panel
    result = score_panel(ds, ["level:output", "level:co2"], 2003, (2002, 2003))
    assert len(result.scored) == len(ds.firm_ids())
    treated = {u.firm_id for u in result.scored if u.treated == 1}
    assert treated == set(ds.treated_ids())


# --- Support ---


def test_parse_support():
    assert parse_support("minmax") == (SupportRule.MINMAX, None)
    assert parse_support("caliper:0.25") == (SupportRule.CALIPER, 0.25)
    for bad in ("bogus", "caliper:x", "caliper:-1"):
        with pytest.raises(ConfigError):
            parse_support(bad)


def test_minmax_support():
    scored = [
        unit("C1", 0.2, 0),
        unit("C2", 0.6, 0),
        unit("T1", 0.1, 1),
        unit("T2", 0.3, 1),
        unit("T3", 0.7, 1),
    ]
    result = enforce_common_support(scored, "minmax")
    assert [u.firm_id for u in result.retained] == ["T2", "C1", "C2"]
    assert sorted(u.firm_id for u in result.dropped) == ["T1", "T3"]
    assert result.bounds == (0.2, 0.6)


def test_caliper_support_uses_index():
    scored = [
        unit("C1", 0.5, 0, index=0.0),
        unit("T1", 0.5, 1, index=0.05),
        unit("T2", 0.5, 1, index=1.0),
    ]
    result = enforce_common_support(scored, SupportRule.CALIPER, caliper=0.1)
    assert [u.firm_id for u in result.retained if u.treated] == ["T1"]


def test_no_overlap():
    with pytest.raises(NoOverlapError):
        enforce_common_support([unit("C1", 0.2, 0), unit("T1", 0.9, 1)], "minmax")
