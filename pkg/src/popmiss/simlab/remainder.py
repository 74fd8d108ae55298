"""Second-order remainder of the one-step estimator, measured against the truth.

For fitted nuisances the one-step estimator targets

    E_Q[ sum_y s_y q_y(V) { pi_y/pihat_y * sum_x lambda_x(y,V) ghat(V,x)/qhat_y(V,x)
                           + (1 - pi_y/pihat_y) mhat(V)/qhat_y(V) } ]

instead of E_Q[g(V, X)]. The difference is the exact remainder. The three
product terms that bound it are also evaluated with the unknown intermediate
q-probabilities replaced by the fitted ones. Expectations over x and y are
exact sums; only V is sampled.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from itertools import permutations

import numpy as np
from scipy.special import expit, logit

from ..estimators import eif_values, onestep_psi_inv
from ..identification import UnitNuisances
from ..model import Dataset, parity_signs, profile_bits
from .dgp import OracleNuisances, Population, SimConfig, apply_missingness, generate_population
from .runner import replicate_seed

ORACLE_SAMPLE_SIZE = 100_000
INTERMEDIATE_NOTE = "intermediate q-probabilities in the product terms are taken at the fitted values"


def oracle_sample(config: SimConfig, a: float, size: int = ORACLE_SAMPLE_SIZE, seed: int = 0) -> Dataset:
    """``size`` captured units from a fresh population, x fully observed."""
    rng = np.random.default_rng(seed)
    parts, have = [], 0
    while have < size:
        batch = max(int(1.2 * (size - have) / config.psi_target), 1000)
        pop = generate_population(replace(config, n_pop=batch), a, rng).captured_part()
        parts.append(pop)
        have += len(pop.sex)
    cat = {k: np.concatenate([getattr(p, k) for p in parts])[:size] for k in ("sex", "age", "x", "y1", "y2")}
    return apply_missingness(Population(**cat), 0.0, rng)


@dataclass(frozen=True)
class RemainderDiagnostic:
    """Remainder terms, all on the 1/psi scale.

    ``propensity_term``, ``pair_term`` and ``even_term`` are the three product
    terms and ``bound_total`` their sum. ``exact`` is the remainder computed
    directly, as (one-step limit) - 1/psi; the product terms are written for
    the opposite orientation, so ``bound_total`` tracks ``-exact`` up to
    third-order terms. ``gap`` is |onestep - 1/psi - mean(true influence)| on a
    concrete dataset, when one was supplied.
    """

    propensity_term: float
    pair_term: float
    even_term: float
    bound_total: float
    exact: float
    gap: float | None
    sample_size: int
    note: str = INTERMEDIATE_NOTE

    def to_dict(self) -> dict:
        return asdict(self)


def _product_terms(true: UnitNuisances, fit: UnitNuisances, signs: np.ndarray, even: np.ndarray):
    """Per-unit values of the three product terms, averaged over x given v."""
    ghat = fit.gamma_inv - 1.0                                   # (n, L)
    d_vx = (true.q_vx - fit.q_vx) / fit.q_vx                     # (n, P, L)
    d_v = (true.q_v - fit.q_v) / fit.q_v                         # (n, P)
    d_pi = (true.pi - fit.pi) / fit.pi                           # (n, P)
    w = true.q_x                                                 # true x | v

    inner = np.sum(signs[None, :, None] * d_pi[:, :, None] * (d_vx - d_v[:, :, None]), axis=1)
    prop = np.sum(w * ghat * inner, axis=1)

    P = len(signs)
    pairs = np.zeros_like(ghat)
    for i, j in permutations(range(P), 2):
        pairs += signs[i] * signs[j] * d_vx[:, i] * d_vx[:, j]
    pair = np.sum(w * ghat * pairs, axis=1)

    sq = np.sum(d_vx[:, even] ** 2, axis=1)
    ev = np.sum(w * ghat * sq, axis=1)
    return prop, pair, ev


def _exact_terms(true: UnitNuisances, fit: UnitNuisances, signs: np.ndarray) -> np.ndarray:
    """Per-unit expected one-step summand minus the true conditional mean."""
    ratio = true.pi / fit.pi                                     # (n, P)
    ghat = fit.gamma_inv - 1.0
    # q_y(v) lambda_x(y, v) = q_y(v, x) q(x | v) under the truth
    joint = true.q_v[:, :, None] * true.lam                      # (n, P, L)
    complete = np.sum(joint * ghat[:, None, :] / fit.q_vx, axis=2)
    fallback = fit.m_v[:, None] / fit.q_v * true.q_v
    per_y = ratio * complete + (1.0 - ratio) * fallback
    return np.sum(signs[None, :] * per_y, axis=1) - true.m_v


def r2_diagnostic(oracle: OracleNuisances, fitted, sample: Dataset,
                  data: Dataset | None = None) -> RemainderDiagnostic:
    """Evaluate the remainder of ``fitted`` over the units of ``sample``.

    Parameters
    ----------
    oracle : OracleNuisances
        The true nuisances.
    fitted
        Any object with ``evaluate(dataset) -> UnitNuisances``.
    sample : Dataset
        Fresh captured units; only their v values are used.
    data : Dataset, optional
        A replicate on which to report the gap between the one-step error and
        the empirical mean of the true influence function.
    """
    true = oracle.evaluate(sample)
    fit = fitted.evaluate(sample)
    K = sample.K
    signs = parity_signs(K)
    even = profile_bits(K).sum(axis=1) % 2 == 0
    prop, pair, ev = (float(np.mean(t)) for t in _product_terms(true, fit, signs, even))
    exact = float(np.mean(_exact_terms(true, fit, signs)))
    gap = None
    if data is not None:
        truth = oracle.true_psi_inv()
        est = onestep_psi_inv(data, fitted.evaluate(data))
        phi = eif_values(data, oracle.evaluate(data), truth)
        gap = abs(est.psi_inv - truth - float(np.mean(phi)))
    return RemainderDiagnostic(prop, pair, ev, prop + pair + ev, exact, gap, sample.N)


def _bump(v: np.ndarray, k: int, phase: float) -> np.ndarray:
    """Smooth bounded direction in v, one column per index ``0..k-1``."""
    sex, age = v[:, :1], v[:, 1:2]
    idx = np.arange(k)[None, :]
    return np.cos(phase + 1.3 * idx + 0.8 * sex + 0.05 * age * (1 + 0.3 * idx))


@dataclass
class PerturbedNuisances:
    """True nuisances moved by ``eps`` along fixed smooth directions.

    q and lambda are tilted by ``exp(eps * h)`` and renormalized; pi is moved
    on the logit scale (probabilities equal to one stay there). At
    ``eps = 0`` this is the oracle itself.
    """

    oracle: OracleNuisances
    eps: float
    perturb_q: bool = True
    perturb_lambda: bool = True
    perturb_pi: bool = True

    def evaluate(self, data: Dataset) -> UnitNuisances:
        v = np.asarray(data.v)
        q_v, lam, pi = self.oracle.components(v)
        P, L = lam.shape[1], lam.shape[2]
        if self.perturb_q:
            q_v = q_v * np.exp(self.eps * _bump(v, P, 0.0))
            q_v /= q_v.sum(axis=1, keepdims=True)
        if self.perturb_lambda:
            h = _bump(v, P * L, 0.7).reshape(-1, P, L)
            lam = lam * np.exp(self.eps * h)
            lam /= lam.sum(axis=2, keepdims=True)
        if self.perturb_pi:
            inside = (pi > 0) & (pi < 1)
            moved = expit(logit(np.clip(pi, 1e-12, 1 - 1e-12)) + self.eps * _bump(v, P, 2.1))
            pi = np.where(inside, moved, pi)
        return UnitNuisances.from_components(q_v, lam, pi, gamma_cap=self.oracle.gamma_cap)


def perturbation_slope(oracle: OracleNuisances, sample: Dataset,
                       eps_grid=(0.02, 0.04, 0.08), field: str = "exact", **which) -> tuple[float, list[float]]:
    """Least-squares slope of log|diagnostic| on log eps."""
    values = [getattr(r2_diagnostic(oracle, PerturbedNuisances(oracle, e, **which), sample), field)
              for e in eps_grid]
    slope = np.polyfit(np.log(eps_grid), np.log(np.abs(values)), 1)[0]
    return float(slope), values


def replicate_diagnostic(config: SimConfig, a: float, rate: float, fitted, replicate: int = 0,
                         sample_size: int = ORACLE_SAMPLE_SIZE) -> RemainderDiagnostic:
    """Diagnostic for ``fitted`` against a fresh oracle sample and one replicate."""
    oracle = OracleNuisances(config, a, rate, config.gamma_cap)
    pop = generate_population(config, a, np.random.default_rng(replicate_seed(config.seed, replicate, 0)))
    data = apply_missingness(pop.captured_part(), rate, np.random.default_rng(replicate_seed(config.seed, replicate, 1)))
    sample = oracle_sample(config, a, sample_size, seed=replicate_seed(config.seed, replicate, 9))
    return r2_diagnostic(oracle, fitted, sample, data)
