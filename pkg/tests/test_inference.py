import numpy as np
import pytest

from ets_effects.constants import SATT_STARS
from ets_effects.errors import NegativeWeightError, RankDeficiencyError
from ets_effects.inference import (
    dependent_columns,
    normal_p_value,
    significance_stars,
    wls,
)


@pytest.fixture
def regression():
    rng = np.random.default_rng(21)
    n = 200
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.normal(size=n)])
    y = X @ np.array([1.0, 2.0, -0.5]) + rng.normal(size=n) * (1 + np.abs(X[:, 1]))
    w = rng.uniform(0.5, 2.0, size=n)
    return X, y, w


def sandwich(X, y, w, groups=None):
    bread = np.linalg.inv(X.T @ (X * w[:, None]))
    beta = bread @ X.T @ (w * y)
    scores = X * (w * (y - X @ beta))[:, None]
    n, k = X.shape
    if groups is None:
        return beta, n / (n - k) * bread @ (scores.T @ scores) @ bread
    labels = np.unique(groups)
    summed = np.array([scores[groups == g].sum(axis=0) for g in labels])
    g = len(labels)
    factor = g / (g - 1) * (n - 1) / (n - k)
    return beta, factor * bread @ (summed.T @ summed) @ bread


def test_wls_matches_normal_equations(regression):
    X, y, w = regression
    fit = wls(X, y, weights=w, names=["const", "x1", "x2"])
    beta, cov = sandwich(X, y, w)
    assert fit.coefficients == pytest.approx(beta.tolist())
    assert fit.se("x1") == pytest.approx(np.sqrt(cov[1, 1]))
    assert fit.coef("x2") == pytest.approx(beta[2])
    assert fit.n_clusters is None


def test_wls_clustered(regression):
    X, y, w = regression
    groups = np.repeat(np.arange(40), 5)
    fit = wls(X, y, weights=w, clusters=groups)
    _, cov = sandwich(X, y, w, groups)
    assert np.array(fit.covariance) == pytest.approx(cov)
    assert fit.n_clusters == 40


def test_wls_rejects_bad_input(regression):
    X, y, w = regression
    with pytest.raises(NegativeWeightError):
        wls(X, y, weights=-w)
    collinear = np.column_stack([X, 2 * X[:, 1]])
    with pytest.raises(RankDeficiencyError) as exc:
        wls(collinear, y, names=["const", "x1", "x2", "twice_x1"])
    assert len(exc.value.details["columns"]) == 1


def test_dependent_columns_full_rank(regression):
    X, _, _ = regression
    assert dependent_columns(X, ["a", "b", "c"]) == []


def test_normal_p_value():
    assert normal_p_value(1.959963984540054, 1.0) == pytest.approx(0.05)
    assert normal_p_value(0.0, 0.0) == 1.0
    assert normal_p_value(0.3, 0.0) == 0.0
    assert normal_p_value(0.3, float("nan")) is None


@pytest.mark.parametrize(
    "p, expected", [(0.001, "***"), (0.03, "**"), (0.07, "*"), (0.2, ""), (None, "")]
)
def test_significance_stars(p, expected):
    assert significance_stars(p) == expected


def test_single_star_legend():
    assert significance_stars(0.001, SATT_STARS) == "*"
    assert significance_stars(0.07, SATT_STARS) == ""
