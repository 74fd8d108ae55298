"""Plug-in and one-step estimators of the inverse capture probability.

The one-step estimator is computed from its expanded per-unit form; the
per-unit term is arranged as ``w * b + (1 - w) * a`` with ``w = R / pi``
so that, when every unit is complete and ``pi == 1``, it reduces exactly
(bit for bit) to the complete-data term ``b``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, DataError, UndefinedEstimateError
from .identification import UnitNuisances
from .model import Dataset, Observation, parity_signs


@dataclass(frozen=True)
class PsiEstimate:
    """Estimate of 1/psi.

    ``sigma2`` is the unbiased empirical variance of the estimated influence
    function. Plug-in estimates carry no variance of their own; one can be
    borrowed from the companion one-step fit with :meth:`with_variance`,
    which sets ``variance_borrowed``.
    """

    psi_inv: float
    method: str
    n_captured: int
    eif_values: np.ndarray | None = field(default=None, repr=False)
    sigma2: float | None = None
    variance_borrowed: bool = False

    @property
    def psi_inv_clamped(self) -> float:
        return max(self.psi_inv, 1.0)

    @property
    def psi(self) -> float:
        return 1.0 / self.psi_inv_clamped

    def with_variance(self, sigma2: float) -> "PsiEstimate":
        return replace(self, sigma2=float(sigma2), variance_borrowed=True)


@dataclass(frozen=True)
class PopulationEstimate:
    n_hat: float
    ci_low: float
    ci_high: float
    alpha: float
    psi: PsiEstimate

    @property
    def approximate(self) -> bool:
        return self.psi.variance_borrowed

    def covers(self, n: float) -> bool:
        return self.ci_low <= n <= self.ci_high


def z_quantile(alpha: float) -> float:
    """Two-sided standard normal critical value z_{1 - alpha/2}."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return float(norm.ppf(1.0 - alpha / 2.0))


def _signs(nuis: UnitNuisances) -> np.ndarray:
    K = int(round(math.log2(nuis.q_v.shape[1] + 1)))
    return parity_signs(K)


def plugin_psi_inv(data: Dataset, nuis: UnitNuisances) -> PsiEstimate:
    """One plus the average over units of the conditional mean of 1/gamma - 1."""
    return PsiEstimate(1.0 + float(np.mean(nuis.m_v)), "plugin", data.N)


def onestep_terms(data: Dataset, nuis: UnitNuisances) -> np.ndarray:
    """Per-unit summand of the expanded one-step estimator (without the +1)."""
    n = data.N
    rows = np.arange(n)
    y = data.profile
    sign = _signs(nuis)[y]
    q_y = nuis.q_v[rows, y]
    a = nuis.m_v / q_y
    xj = np.where(data.r, data.x_joint, 0)
    b = (nuis.gamma_inv[rows, xj] - 1.0) / nuis.q_vx[rows, y, xj]
    w = np.where(data.r, 1.0 / nuis.pi[rows, y], 0.0)
    b = np.where(data.r, b, 0.0)
    return sign * (w * b + (1.0 - w) * a)


def eif_values(data: Dataset, nuis: UnitNuisances, psi_inv_ref: float) -> np.ndarray:
    """Estimated efficient influence function at every unit."""
    return onestep_terms(data, nuis) - (psi_inv_ref - 1.0)


def eif_eval(unit: Observation, nuis: UnitNuisances, psi_inv_ref: float, schema) -> float:
    """Influence function of a single unit, written as the literal profile sum.

    ``nuis`` holds the nuisances of this one unit (leading axis of length 1).
    Used as an independent check of :func:`eif_values`.
    """
    K = unit.y.K
    signs = parity_signs(K)
    yi = unit.y.index
    m = float(nuis.m_v[0])
    xj = None
    if unit.r == 1:
        codes = [c.levels.index(lvl) for c, lvl in zip(schema.x_columns, unit.x)]
        xj = int(np.ravel_multi_index(codes, schema.x_shape))
    total = 0.0
    for y in range(2**K - 1):
        hit = 1.0 if y == yi else 0.0
        inner = hit / nuis.q_v[0, y] * m
        if unit.r == 1 and hit:
            g = nuis.gamma_inv[0, xj] - 1.0
            inner += (1.0 / nuis.pi[0, y]) * (g / nuis.q_vx[0, y, xj] - m / nuis.q_v[0, y])
        total += signs[y] * inner
    return total - (psi_inv_ref - 1.0)


def onestep_psi_inv(data: Dataset, nuis: UnitNuisances) -> PsiEstimate:
    """Bias-corrected one-step estimate with centered influence values."""
    terms = onestep_terms(data, nuis)
    psi_inv = 1.0 + float(np.mean(terms))
    if psi_inv < 1.0:
        warnings.warn(
            f"one-step estimate of 1/psi is {psi_inv:.4f} < 1; population size uses the clamped value",
            RuntimeWarning, stacklevel=2,
        )
    eif = terms - (psi_inv - 1.0)
    sigma2 = float(np.var(eif, ddof=1)) if data.N > 1 else 0.0
    return PsiEstimate(psi_inv, "onestep", data.N, eif, sigma2)


def complete_data_onestep(data: Dataset, nuis: UnitNuisances) -> float:
    """One-step estimate for fully observed data (no missingness weighting).

    Independent path for the R == 1 reduction: each unit contributes
    sign(Y) * (1/gamma(v, x) - 1) / q_Y(v, x).
    """
    if not data.r.all():
        raise DataError("complete-data estimator requires every x to be observed")
    rows = np.arange(data.N)
    y = data.profile
    g = nuis.gamma_inv[rows, data.x_joint] - 1.0
    contrib = _signs(nuis)[y] * (g / nuis.q_vx[rows, y, data.x_joint])
    return 1.0 + float(np.mean(contrib))


def ci_psi_inv(est: PsiEstimate, alpha: float = 0.05) -> tuple[float, float]:
    """Normal-approximation interval psi_inv +/- z * sigma / sqrt(N)."""
    if est.sigma2 is None:
        raise ConfigError(
            "this estimate has no variance; run the one-step estimator and borrow its sigma2"
        )
    half = z_quantile(alpha) * math.sqrt(est.sigma2 / est.n_captured)
    return est.psi_inv - half, est.psi_inv + half


def population_estimate(est: PsiEstimate, alpha: float = 0.05) -> PopulationEstimate:
    """n_hat = N / psi_hat with an interval that adds binomial variation of N."""
    if est.sigma2 is None:
        raise ConfigError(
            "this estimate has no variance; run the one-step estimator and borrow its sigma2"
        )
    psi = est.psi
    n_hat = est.n_captured * est.psi_inv_clamped
    half = z_quantile(alpha) * math.sqrt(n_hat * (psi * est.sigma2 + (1.0 - psi) / psi))
    return PopulationEstimate(n_hat, n_hat - half, n_hat + half, alpha, est)


def lincoln_petersen(n1: int, n2: int, n12: int) -> float:
    """Two-list estimate N1 * N2 / N12."""
    if n12 < 1:
        raise UndefinedEstimateError("Lincoln-Petersen is undefined when no unit is on both lists")
    if n12 > min(n1, n2):
        raise DataError("overlap count exceeds a list count")
    return n1 * n2 / n12


def lincoln_petersen_from(data: Dataset) -> float:
    if data.K != 2:
        raise ConfigError(f"Lincoln-Petersen needs exactly two lists, got K={data.K}")
    counts = data.profile_counts()
    n01, n10, n11 = counts
    return lincoln_petersen(int(n10 + n11), int(n01 + n11), int(n11))
