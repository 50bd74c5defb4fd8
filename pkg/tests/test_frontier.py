import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from scipy import integrate, stats

from ets_effects.constants import Inefficiency
from ets_effects.errors import (
    DataError,
    FrontierConvergenceError,
    InsufficientDataError,
)
from ets_effects.frontier import (
    FrontierFits,
    FrontierModel,
    efficiency_scores,
    estimate_frontier,
    fit_frontier,
    fit_frontiers,
    frontier_gradient,
    frontier_loglik,
    frontier_table,
    indexed_median_series,
    jlms_distance,
    median_distance_series,
    returns_to_scale,
)
from ets_effects.panel_models import PanelDataset
from ets_effects.synthgen import IndustryTruth, SynthConfig, generate

PARAMETERS = ["constant", "capital", "labor", "energy", "sigma_u", "sigma_v"]


def simulate(n, beta, constant, sigma_u, sigma_v, seed=0):
    rng = np.random.default_rng(seed)
    ln_x = rng.normal(size=(n, len(beta)))
    w = np.abs(rng.normal(0.0, sigma_v, size=n))
    ln_y = constant + ln_x @ np.array(beta) - w + rng.normal(0.0, sigma_u, size=n)
    return ln_y, ln_x


# --- Likelihood ---


@pytest.mark.parametrize(
    "law, theta",
    [
        (
            Inefficiency.HALF_NORMAL,
            np.array([0.8, 0.3, 0.5, np.log(0.2), np.log(0.4)]),
        ),
        (
            Inefficiency.TRUNCATED_NORMAL,
            np.array([0.8, 0.3, 0.5, np.log(0.2), np.log(0.4), 0.15]),
        ),
    ],
)
def test_gradient_matches_finite_differences(law, theta):
    ln_y, ln_x = simulate(60, [0.3, 0.5], 1.0, 0.2, 0.3, seed=4)
    analytic = frontier_gradient(theta, ln_y, ln_x, law).sum(axis=0)
    numeric = np.zeros_like(theta)
    for j in range(len(theta)):
        h = 1e-6
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        upper = frontier_loglik(up, ln_y, ln_x, law).sum()
        lower = frontier_loglik(down, ln_y, ln_x, law).sum()
        numeric[j] = (upper - lower) / (2 * h)
    assert analytic == pytest.approx(numeric, rel=1e-5, abs=1e-5)


def test_half_normal_loglik_matches_density():
    # eps = u - w with u ~ N(0, 0.2^2) and w ~ N+(0, 0.4^2)
    theta = np.array([0.0, 0.0, np.log(0.2), np.log(0.4)])
    eps = np.array([-0.3, 0.1])
    ln_x = np.zeros((2, 1))
    ours = frontier_loglik(theta, eps, ln_x)

    def density(e):
        def integrand(w):
            return stats.norm.pdf(e + w, scale=0.2) * 2 * stats.norm.pdf(w, scale=0.4)

        return integrate.quad(integrand, 0, np.inf)[0]

    assert np.exp(ours) == pytest.approx([density(e) for e in eps], rel=1e-6)


# --- Distance ---


@pytest.mark.parametrize("mu_v", [0.0, 0.2])
def test_jlms_is_posterior_mean(mu_v):
    s_u, s_v = 0.2, 0.3
    eps = np.array([-0.8, -0.1, 0.0, 0.4])
    ours = jlms_distance(eps, s_u, s_v, mu_v)

    for e, d in zip(eps, ours):
        def post(w, e=e):
            return stats.norm.pdf((e + w) / s_u) * stats.norm.pdf((w - mu_v) / s_v)

        num = integrate.quad(lambda w: w * post(w), 0, np.inf)[0]
        den = integrate.quad(post, 0, np.inf)[0]
        assert d == pytest.approx(num / den, rel=1e-6)


def test_jlms_is_nonnegative_and_decreasing():
    eps = np.linspace(-3, 3, 101)
    d = jlms_distance(eps, 0.3, 0.5)
    assert (d >= 0).all()
    assert (np.diff(d) <= 0).all()


# --- Estimation ---


def test_estimate_frontier_recovers_parameters():
    ln_y, ln_x = simulate(3000, [0.3, 0.5, 0.2], 1.0, 0.1, 0.3, seed=1)
    model = estimate_frontier(ln_y, ln_x)

    assert not model.boundary
    assert model.elasticities == pytest.approx([0.3, 0.5, 0.2], abs=0.03)
    assert model.constant == pytest.approx(1.0, abs=0.08)
    assert model.sigma_v == pytest.approx(0.3, abs=0.06)
    assert model.sigma_u == pytest.approx(0.1, abs=0.06)
    assert set(model.std_errors) == set(PARAMETERS)
    assert all(se is not None and se > 0 for se in model.std_errors.values())


def test_fit_reaches_gradient_tolerance():
    ln_y, ln_x = simulate(800, [0.3, 0.5, 0.2], 1.0, 0.1, 0.3, seed=2)
    model = estimate_frontier(ln_y, ln_x)
    score = frontier_gradient(model.theta(), ln_y, ln_x).mean(axis=0)
    assert model.converged
    assert np.abs(score).max() < 1e-6


def test_unreachable_tolerance_raises():
    ln_y, ln_x = simulate(300, [0.3, 0.5, 0.2], 1.0, 0.1, 0.3, seed=2)
    with pytest.raises(FrontierConvergenceError) as exc:
        estimate_frontier(ln_y, ln_x, gtol=1e-20)
    assert exc.value.details["gradient_norm"] >= 1e-20
    assert exc.value.details["trace"]
    assert exc.value.exit_code == 4


def test_iteration_limit_raises():
    ln_y, ln_x = simulate(300, [0.3, 0.5, 0.2], 1.0, 0.1, 0.3, seed=2)
    with pytest.raises(FrontierConvergenceError):
        estimate_frontier(ln_y, ln_x, max_iter=1)


def test_exact_fit_is_boundary():
    rng = np.random.default_rng(0)
    ln_x = rng.normal(size=(100, 3))
    ln_y = 2.0 + ln_x @ np.array([0.2, 0.6, 0.1])
    model = estimate_frontier(ln_y, ln_x)
    assert model.boundary
    assert model.elasticities == pytest.approx([0.2, 0.6, 0.1])
    assert model.constant == pytest.approx(2.0)


def test_positive_skew_is_boundary():
    ln_y, ln_x = simulate(500, [0.3, 0.5, 0.2], 1.0, 0.1, 0.3, seed=3)
    # mirror the inefficiency so residuals skew the wrong way
    fitted = 1.0 + ln_x @ np.array([0.3, 0.5, 0.2])
    model = estimate_frontier(2 * fitted - ln_y, ln_x)
    assert model.boundary
    assert model.log_likelihood is not None


@pytest.fixture(scope="module")
def one_industry():
    cfg = SynthConfig(
        n_firms=300,
        treated_share=0.1,
        industries={17: IndustryTruth.from_published(17)},
        sigma_v=0.5,
        crisis_drop=0.0,
        seed=3,
    )
    ds, _ = generate(cfg)
    return ds


def test_fit_frontier_on_simulated_industry(one_industry):
    model = fit_frontier(one_industry, industry=17)
    truth = IndustryTruth.from_published(17)
    assert model.industry == 17
    assert model.n_firms == 300
    assert model.n_obs == 300 * 10
    assert model.elasticities == pytest.approx(truth.elasticities, abs=0.06)


def test_fit_frontier_needs_observations(one_industry):
    with pytest.raises(InsufficientDataError) as exc:
        fit_frontier(one_industry, industry=17, min_obs=10_000)
    assert exc.value.details["n_obs"] == 3000


def test_fit_frontiers_records_failures(one_industry):
    fits = fit_frontiers(one_industry, industries=[12, 17, 20])
    assert list(fits.models) == [17]
    assert "InsufficientDataError" in fits.failures[20]
    assert 12 not in fits.failures

    table = frontier_table(fits)
    assert list(table["industry"]) == [17, 20]
    assert list(table["status"]) == ["ok", "failed"]


# --- Model ---


def test_published_returns_to_scale():
    assert returns_to_scale(FrontierModel.from_published(11)) == pytest.approx(1.205)
    assert returns_to_scale(FrontierModel.from_published(23)) == pytest.approx(0.929)
    with pytest.raises(DataError):
        FrontierModel.from_published(12)


def test_model_validation():
    with pytest.raises(ValidationError):
        FrontierModel(
            elasticities=[0.1, 0.2, 0.3], constant=1.0, sigma_u=0.0, sigma_v=0.3
        )
    with pytest.raises(ValidationError):
        FrontierModel(elasticities=[0.1, 0.2], constant=1.0, sigma_u=0.1, sigma_v=0.3)


def test_model_accessors_and_yaml():
    model = FrontierModel.from_published(17, sigma_v=0.25)
    assert model.elasticity("labor") == model.elasticity("employees") == 0.677
    assert model.parameter_names() == PARAMETERS
    assert FrontierModel.from_yaml(model.to_yaml()) == model


def test_frontier_table_values():
    fits = FrontierFits(
        models={11: FrontierModel.from_published(11)}, failures={30: "DataError: x"}
    )
    table = frontier_table(fits).set_index("industry")
    assert table.loc[11, "returns_to_scale"] == pytest.approx(1.205)
    assert table.loc[11, "labor"] == 0.725
    assert table.loc[30, "status"] == "failed"


# --- Scores ---


@pytest.fixture
def score_panel():
    frame = pd.DataFrame(
        {
            "firm_id": ["A", "A", "B", "B", "C"],
            "year": [2003, 2004, 2003, 2004, 2003],
            "industry": [17] * 5,
            "treated": [1, 1, 0, 0, 0],
            "output": [5000.0, 5200.0, 3000.0, 3100.0, 4000.0],
            "capital": [2000.0, 2100.0, np.nan, 1500.0, 1800.0],
            "employees": [40.0, 41.0, 30.0, 30.0, 35.0],
            "energy_total": [900.0, 950.0, 600.0, 0.0, 700.0],
        }
    )
    return PanelDataset.from_frame(frame)


def test_efficiency_scores_reasons(score_panel):
    model = FrontierModel.from_published(17, sigma_v=0.3)
    scores = efficiency_scores(model, score_panel)
    by_key = {(s.firm_id, s.year): s for s in scores}
    assert by_key[("B", 2003)].reason == "missing input or output"
    assert by_key[("B", 2004)].reason == "nonpositive input or output"
    assert by_key[("B", 2004)].distance is None
    assert all(by_key[k].distance >= 0 for k in [("A", 2003), ("A", 2004), ("C", 2003)])


def test_median_distance_series_pools_industries(score_panel):
    model = FrontierModel.from_published(17, sigma_v=0.3)
    scores = efficiency_scores(model, score_panel)
    series = median_distance_series(scores, score_panel)
    assert set(series["industry"]) == {"17", "all"}
    pooled = series[(series["industry"] == "all") & (series["group"] == "control")]
    assert pooled.set_index("year")["n"].to_dict() == {2003: 1}


def test_median_distance_peaks_in_crisis_year():
    codes = [17, 22, 25]
    cfg = SynthConfig(
        n_firms=3000,
        industries={c: IndustryTruth.from_published(c) for c in codes},
        seed=9,
    )
    ds, _ = generate(cfg)
    scores = []
    for code in codes:
        model = FrontierModel.from_published(code, sigma_v=0.3)
        scores.extend(efficiency_scores(model, ds.restrict_industry(code)))
    series = median_distance_series(scores, ds)
    control = series[series["group"] == "control"]
    for code in codes:
        industry = control[control["industry"] == str(code)]
        by_year = industry.set_index("year")["median_distance"]
        assert by_year.idxmax() == 2009


def test_indexed_median_series(synth_panel):
    ds, _ = synth_panel
    series = indexed_median_series(ds, ["co2", "output"], base_year=2003)
    base = series[series["year"] == 2003]
    assert base["index"].to_numpy() == pytest.approx(1.0)
    assert set(series["variable"]) == {"co2", "output"}
    with pytest.raises(DataError):
        indexed_median_series(ds, ["co2"], base_year=1990)
