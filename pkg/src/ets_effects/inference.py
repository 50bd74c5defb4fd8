"""
Shared linear-algebra and inference helpers: rank checks, weighted least
squares with sandwich covariances, normal p-values and significance stars.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import linalg, stats

from ets_effects.constants import ATT_STARS
from ets_effects.errors import NegativeWeightError, RankDeficiencyError


def dependent_columns(design: np.ndarray, names: Sequence[str]) -> List[str]:
    """
    Names of the columns a pivoted QR finds linearly dependent.

    The tolerance follows the usual ``max(n, k) * eps * |R[0, 0]|`` rule.
    """
    if design.shape[1] == 0:
        return []
    _, r, piv = linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(design.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int((diag > tol).sum())
    return [names[j] for j in sorted(piv[rank:])]


def check_rank(design: np.ndarray, names: Sequence[str]) -> None:
    dependent = dependent_columns(design, names)
    if dependent:
        raise RankDeficiencyError(dependent)


class WlsFit(BaseModel):
    """
    Weighted least-squares fit with a sandwich covariance.

    Attributes:
        names (list[str]): Regressor names.
        coefficients (list[float]): (X'WX)^-1 X'Wy.
        covariance (list[list[float]]): HC1 or firm-clustered CR1 covariance.
        n_obs (int): Rows used.
        n_clusters (Optional[int]): Clusters when clustered.
    """

    names: List[str]
    coefficients: List[float]
    covariance: List[List[float]]
    residuals: List[float]
    n_obs: int
    n_clusters: Optional[int] = None

    def coef(self, name: str) -> float:
        return self.coefficients[self.names.index(name)]

    def se(self, name: str) -> float:
        j = self.names.index(name)
        return float(np.sqrt(max(self.covariance[j][j], 0.0)))


def wls(
    X: np.ndarray,
    y: np.ndarray,
    weights: Optional[np.ndarray] = None,
    names: Optional[Sequence[str]] = None,
    clusters: Optional[np.ndarray] = None,
) -> WlsFit:
    """
    Solve weighted least squares through a QR factorization of sqrt(W) X.

    Without ``clusters`` the covariance is HC1:
    ``n/(n-k) * B (sum_i w_i^2 e_i^2 x_i x_i') B`` with ``B = (X'WX)^-1``.
    With ``clusters`` the meat sums scores within cluster and the
    small-sample factor is ``G/(G-1) * (n-1)/(n-k)`` (CR1).
    Raises:
        NegativeWeightError: any weight below zero.
        RankDeficiencyError: X is rank deficient after weighting.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if (w < 0).any():
        raise NegativeWeightError("Regression weights must be nonnegative")

    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    check_rank(Xw, names)
    q, r = np.linalg.qr(Xw)
    beta = linalg.solve_triangular(r, q.T @ (y * sw))
    resid = y - X @ beta

    r_inv = linalg.solve_triangular(r, np.eye(k))
    bread = r_inv @ r_inv.T
    scores = X * (w * resid)[:, None]
    if clusters is None:
        meat = scores.T @ scores
        factor = n / (n - k) if n > k else 1.0
        n_clusters = None
    else:
        labels, codes = np.unique(np.asarray(clusters), return_inverse=True)
        summed = np.zeros((len(labels), k))
        np.add.at(summed, codes, scores)
        meat = summed.T @ summed
        g = len(labels)
        factor = (g / (g - 1)) * ((n - 1) / (n - k)) if g > 1 and n > k else 1.0
        n_clusters = g
    cov = factor * bread @ meat @ bread
    return WlsFit(
        names=names,
        coefficients=beta.tolist(),
        covariance=cov.tolist(),
        residuals=resid.tolist(),
        n_obs=n,
        n_clusters=n_clusters,
    )


def normal_p_value(estimate: float, se: float) -> Optional[float]:
    """Two-sided p-value of estimate / se under the standard normal."""
    if se is None or not np.isfinite(se):
        return None
    if se == 0:
        return 1.0 if estimate == 0 else 0.0
    return float(2 * stats.norm.sf(abs(estimate / se)))


def significance_stars(
    p_value: Optional[float], legend: Sequence[Tuple[float, str]] = ATT_STARS
) -> str:
    """Marker of the strictest threshold ``p_value`` falls below."""
    if p_value is None:
        return ""
    for threshold, marker in legend:
        if p_value < threshold:
            return marker
    return ""


__all__ = [
    "dependent_columns",
    "check_rank",
    "WlsFit",
    "wls",
    "normal_p_value",
    "significance_stars",
]
