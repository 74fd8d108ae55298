"""Two-list synthetic population with heterogeneous capture and MAR missingness.

Covariates: sex ~ Bernoulli(0.48), age ~ N(40, 12^2) truncated to [10, 70],
x uniform on ten unordered levels. Lists are conditionally independent:

    logit P(Y1=1) = a - 0.5 sex + 0.005 (age-45)^2 + (2 sex - 1) beta_x
    logit P(Y2=1) = a + 0.5 sex + 0.005 (age-35)^2 + (sex - 0.5) beta_x

x goes missing with probability 5r (survey-only, sex=1), r (survey-only,
sex=0), 3r (hospital-only) or r (both lists), each capped at one.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy.special import expit

from ..errors import ConfigError
from ..identification import DEFAULT_GAMMA_CAP, UnitNuisances
from ..model import Column, CovariateSchema, Dataset, dataset_from_arrays
from ..nuisance import LearnerSpec, NuisanceSpecs

BETA_X = (-1.0, -0.6, -0.2, 0.2, 0.6, 0.0, -0.4, 0.4, 0.8, 1.0)

# profile indices in canonical order for K=2: 0 -> (0,1), 1 -> (1,0), 2 -> (1,1)
SURVEY_ONLY, HOSPITAL_ONLY, BOTH = 0, 1, 2

SIM_SCHEMA = CovariateSchema(
    lists=("list1", "list2"),
    v_columns=(Column("sex", "categorical", ("0", "1")), Column("age", "numeric")),
    x_columns=(Column("x", "categorical", tuple(str(k) for k in range(1, 11))),),
)

WELL_SPECIFIED_TERMS = ("sex", "age", "age^2", "sex:age", "sex:age^2")
LINEAR_TERMS = ("sex", "age")
# profile log-odds given (v, x) are exactly linear in these
PROFILE_GIVEN_VX_TERMS = ("sex", "age", "age^2", "x", "sex:x")


def default_learners() -> NuisanceSpecs:
    """Logistic nuisance models matched to the generating process.

    The profile given (v, x) is a multinomial logit in
    ``PROFILE_GIVEN_VX_TERMS``, so lambda is obtained through Bayes' rule;
    the missingness model is saturated in (profile, sex).
    """
    return NuisanceSpecs(
        q=LearnerSpec(terms=WELL_SPECIFIED_TERMS, profile="none"),
        lam=LearnerSpec(terms=PROFILE_GIVEN_VX_TERMS, route="bayes", marginal_terms=LINEAR_TERMS),
        pi=LearnerSpec(terms=("sex",), profile="interact"),
    )


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the synthetic study.

    ``sex_effect``, ``age_coef`` and ``beta_x`` can be zeroed to obtain a
    homogeneous population (then P(Y_k = 1) = expit(a)).
    """

    n_pop: int = 5000
    psi_target: float = 0.7
    beta_x: tuple[float, ...] = BETA_X
    sex_p: float = 0.48
    sex_effect: float = 0.5
    age_coef: float = 0.005
    age_mean: float = 40.0
    age_var: float = 144.0
    age_bounds: tuple[float, float] = (10.0, 70.0)
    age_centers: tuple[float, float] = (45.0, 35.0)
    missing_target: float = 0.0
    replicates: int = 50
    seed: int = 20240630
    k_folds: int = 5
    alpha: float = 0.05
    learners: NuisanceSpecs = field(default_factory=default_learners)
    imputer: LearnerSpec = field(
        default_factory=lambda: LearnerSpec(family="tree-ensemble", terms=("sex", "age"), profile="additive",
                                            n_trees=100, min_leaf=1)
    )
    gamma_cap: float = DEFAULT_GAMMA_CAP

    def __post_init__(self):
        object.__setattr__(self, "beta_x", tuple(float(b) for b in self.beta_x))
        if not 0 < self.psi_target < 1:
            raise ConfigError("psi_target must lie in (0, 1)")
        if not 0 <= self.missing_target <= 0.7:
            raise ConfigError("missing_target must lie in [0, 0.7]")
        if len(self.beta_x) != 10:
            raise ConfigError("beta_x needs one effect per x level (10)")
        if self.n_pop < 2 or self.replicates < 1:
            raise ConfigError("n_pop and replicates must be positive")
        lo, hi = self.age_bounds
        if not lo < hi:
            raise ConfigError("age bounds must be increasing")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["learners"] = self.learners.to_dict()
        d["imputer"] = self.imputer.to_dict()
        d["beta_x"] = list(self.beta_x)
        d["age_bounds"] = list(self.age_bounds)
        d["age_centers"] = list(self.age_centers)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown simulation settings: {sorted(unknown)}")
        if "learners" in d:
            d["learners"] = NuisanceSpecs.from_dict(d["learners"])
        if "imputer" in d:
            d["imputer"] = LearnerSpec.from_dict(d["imputer"])
        for key in ("beta_x", "age_bounds", "age_centers"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def homogeneous(self) -> "SimConfig":
        return replace(self, sex_effect=0.0, age_coef=0.0, beta_x=(0.0,) * 10)

    @cached_property
    def age_quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes and normalized truncated-normal weights."""
        lo, hi = self.age_bounds
        nodes, weights = np.polynomial.legendre.leggauss(200)
        ages = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        dens = np.exp(-0.5 * (ages - self.age_mean) ** 2 / self.age_var) * weights
        return ages, dens / dens.sum()


def capture_probs(config: SimConfig, a: float, sex, age, x):
    """P(Y1=1) and P(Y2=1) given covariates (x holds 0-based level codes)."""
    sex = np.asarray(sex, dtype=float)
    age = np.asarray(age, dtype=float)
    beta = np.asarray(config.beta_x)[np.asarray(x, dtype=np.int64)]
    c1, c2 = config.age_centers
    eta1 = a - config.sex_effect * sex + config.age_coef * (age - c1) ** 2 + (2 * sex - 1) * beta
    eta2 = a + config.sex_effect * sex + config.age_coef * (age - c2) ** 2 + (sex - 0.5) * beta
    return expit(eta1), expit(eta2)


def profile_probs(p1, p2) -> np.ndarray:
    """P(Y = y) for the three nonzero profiles, stacked on the last axis."""
    return np.stack([(1 - p1) * p2, p1 * (1 - p2), p1 * p2], axis=-1)


def _grid(config: SimConfig):
    """Covariate grid (sex, age node, x) with population weights."""
    ages, w_age = config.age_quadrature
    sex = np.array([0.0, 1.0])[:, None, None]
    w_sex = np.array([1 - config.sex_p, config.sex_p])[:, None, None]
    age = ages[None, :, None]
    x = np.arange(10)[None, None, :]
    weights = w_sex * w_age[None, :, None] * 0.1
    return sex, age, x, np.broadcast_to(weights, (2, len(ages), 10))


def capture_fraction(config: SimConfig, a: float) -> float:
    """P(Y != 0) by quadrature over age and exact sums over sex and x."""
    sex, age, x, weights = _grid(config)
    p1, p2 = capture_probs(config, a, sex, age, x)
    return float(np.sum(weights * (1 - (1 - p1) * (1 - p2))))


def sample_covariates(config: SimConfig, n: int, rng: np.random.Generator):
    sex = (rng.random(n) < config.sex_p).astype(float)
    lo, hi = config.age_bounds
    sd = np.sqrt(config.age_var)
    age = np.empty(n)
    filled = 0
    while filled < n:
        draw = rng.normal(config.age_mean, sd, size=max(2 * (n - filled), 16))
        draw = draw[(draw >= lo) & (draw <= hi)][: n - filled]
        age[filled:filled + len(draw)] = draw
        filled += len(draw)
    x = rng.integers(0, 10, size=n)
    return sex, age, x


def mc_capture_fraction(config: SimConfig, a: float, draws: int = 10**6, seed: int = 0) -> float:
    """Monte Carlo P(Y != 0) from ``draws`` simulated individuals."""
    rng = np.random.default_rng(seed)
    sex, age, x = sample_covariates(config, draws, rng)
    p1, p2 = capture_probs(config, a, sex, age, x)
    y1 = rng.random(draws) < p1
    y2 = rng.random(draws) < p2
    return float(np.mean(y1 | y2))


def _bisect(f, lo, hi, tol, max_iter=200):
    f_lo, f_hi = f(lo), f(hi)
    if np.sign(f_lo) == np.sign(f_hi):
        raise ConfigError("calibration target is not bracketed")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def calibrate_intercept(config: SimConfig, method: str = "quadrature", draws: int = 10**6,
                        seed: int = 0) -> float:
    """Intercept a with P(Y != 0) equal to ``config.psi_target``.

    ``quadrature`` solves the exact integral; ``monte_carlo`` bisects a
    common-random-numbers estimate from ``draws`` individuals.
    """
    if method == "quadrature":
        return _bisect(lambda a: capture_fraction(config, a) - config.psi_target, -10.0, 10.0, 1e-12)
    if method != "monte_carlo":
        raise ConfigError(f"unknown calibration method {method!r}")
    rng = np.random.default_rng(seed)
    sex, age, x = sample_covariates(config, draws, rng)
    u1, u2 = rng.random(draws), rng.random(draws)

    def frac(a):
        p1, p2 = capture_probs(config, a, sex, age, x)
        return np.mean((u1 < p1) | (u2 < p2)) - config.psi_target

    return _bisect(frac, -10.0, 10.0, 1e-9)


MISSING_MULTIPLIERS = {  # (profile, sex) -> multiple of the base rate
    (SURVEY_ONLY, 1): 5.0,
    (SURVEY_ONLY, 0): 1.0,
    (HOSPITAL_ONLY, 1): 3.0,
    (HOSPITAL_ONLY, 0): 3.0,
    (BOTH, 1): 1.0,
    (BOTH, 0): 1.0,
}


def missing_prob(rate: float, profile, sex) -> np.ndarray:
    """P(R = 0 | profile, sex), capped at one."""
    profile = np.asarray(profile, dtype=np.int64)
    sex = np.asarray(sex).astype(np.int64)
    mult = np.zeros(np.broadcast(profile, sex).shape)
    for (p, s), m in MISSING_MULTIPLIERS.items():
        mult = np.where((profile == p) & (sex == s), m, mult)
    return np.minimum(mult * rate, 1.0)


def stratum_weights(config: SimConfig, a: float) -> dict:
    """Share of captured units in each (profile, sex) stratum."""
    sex, age, x, weights = _grid(config)
    p1, p2 = capture_probs(config, a, sex, age, x)
    probs = profile_probs(p1, p2) * weights[..., None]
    total = probs.sum()
    return {(p, s): float(probs[s, ..., p].sum() / total) for p in range(3) for s in range(2)}


def marginal_missing(weights: dict, rate: float) -> float:
    return sum(w * float(missing_prob(rate, p, s)) for (p, s), w in weights.items())


def calibrate_missingness(config: SimConfig, a: float) -> float:
    """Base rate r giving marginal P(R=0) among captured units equal to the target.

    Stratum shares are exact (quadrature), so the marginal is a known
    piecewise-linear function of r. Warns when a stratum probability is
    capped at one.
    """
    target = config.missing_target
    if target == 0:
        return 0.0
    weights = stratum_weights(config, a)
    if marginal_missing(weights, 1.0) < target:
        raise ConfigError(f"missingness target {target} is unreachable")
    rate = _bisect(lambda r: marginal_missing(weights, r) - target, 0.0, 1.0, 1e-13)
    if 5 * rate > 1:
        warnings.warn(
            f"missingness probability capped at 1 in the survey-only, sex=1 stratum (5r = {5 * rate:.3f})",
            RuntimeWarning, stacklevel=2,
        )
    return rate


@dataclass
class Population:
    """Full simulated population (captured or not)."""

    sex: np.ndarray
    age: np.ndarray
    x: np.ndarray
    y1: np.ndarray
    y2: np.ndarray

    @property
    def captured(self) -> np.ndarray:
        return self.y1 | self.y2

    def captured_part(self) -> "Population":
        keep = self.captured
        return Population(self.sex[keep], self.age[keep], self.x[keep], self.y1[keep], self.y2[keep])


def generate_population(config: SimConfig, a: float, rng: np.random.Generator) -> Population:
    sex, age, x = sample_covariates(config, config.n_pop, rng)
    p1, p2 = capture_probs(config, a, sex, age, x)
    y1 = rng.random(config.n_pop) < p1
    y2 = rng.random(config.n_pop) < p2
    return Population(sex, age, x, y1, y2)


def apply_missingness(captured: Population, rate: float, rng: np.random.Generator) -> Dataset:
    """Blank x per the stratum probabilities and return the observed dataset."""
    bits = np.column_stack([captured.y1, captured.y2]).astype(np.int64)
    profile = bits @ np.array([2, 1]) - 1
    p_miss = missing_prob(rate, profile, captured.sex)
    missing = rng.random(len(profile)) < p_miss
    x = np.where(missing, -1, captured.x)
    v = np.column_stack([captured.sex, captured.age])
    return dataset_from_arrays(SIM_SCHEMA, bits, v, x)


@dataclass
class OracleNuisances:
    """The true q, lambda and pi of the simulation at given (a, r)."""

    config: SimConfig
    a: float
    rate: float
    gamma_cap: float = DEFAULT_GAMMA_CAP

    def components(self, v: np.ndarray):
        sex, age = v[:, 0], v[:, 1]
        x = np.arange(10)[None, :]
        p1, p2 = capture_probs(self.config, self.a, sex[:, None], age[:, None], x)
        joint = profile_probs(p1, p2)                      # (n, L, P)
        q_v = joint.sum(axis=1) / joint.sum(axis=(1, 2))[:, None]
        lam = np.swapaxes(joint / joint.sum(axis=1, keepdims=True), 1, 2)  # (n, P, L)
        pi = 1.0 - missing_prob(self.rate, np.arange(3)[None, :], sex[:, None])
        return q_v, lam, pi

    def evaluate(self, data: Dataset) -> UnitNuisances:
        q_v, lam, pi = self.components(np.asarray(data.v))
        return UnitNuisances.from_components(q_v, lam, pi, gamma_cap=self.gamma_cap)

    def true_psi_inv(self) -> float:
        return 1.0 / capture_fraction(self.config, self.a)
