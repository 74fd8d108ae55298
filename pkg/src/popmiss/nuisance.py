"""Fitting and evaluation of the three nuisance functions.

* q-model: distribution of the capture profile given v among captured units.
* lambda-model: distribution of the joint x level given (profile, v),
  fitted on complete cases only. It is either fitted directly or obtained
  by Bayes' rule from a profile classifier on (v, x) and an x classifier on
  v; the second route is often far more parsimonious.
* pi-model: probability that x is observed given (profile, v).

All predictions are floored at ``clip_eps`` and renormalized, which keeps
every inverse weight finite.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, DataError, PopmissError
from .learners import (
    ConstantClassifier,
    FeatureMap,
    ForestClassifier,
    FrequencyTable,
    MultinomialLogit,
    clip_simplex,
)
from .model import CovariateSchema, Dataset

FAMILIES = ("multinomial-logistic", "frequency-table", "tree-ensemble")
ROUTES = ("direct", "bayes")


@dataclass(frozen=True)
class LearnerSpec:
    """Learner family plus hyperparameters for one nuisance model.

    ``terms`` lists the v features (``None`` means every v column, raw);
    ``profile`` is how the capture profile enters models conditioned on it.

    ``route`` only matters for the lambda-model. With ``"bayes"`` the
    profile is classified on (v, x) using ``terms``, which may then name x
    columns (``None`` means every v and x column), and x is classified on v
    using ``marginal_terms``; ``profile`` is ignored.
    """

    family: str = "multinomial-logistic"
    terms: tuple[str, ...] | None = None
    profile: str = "interact"
    alpha: float = 0.5
    l2: float = 1e-4
    tol: float = 1e-8
    max_iter: int = 100
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 5
    seed: int = 0
    clip_eps: float = 1e-3
    route: str = "direct"
    marginal_terms: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown learner family {self.family!r}; choose from {FAMILIES}")
        if self.route not in ROUTES:
            raise ConfigError(f"unknown lambda route {self.route!r}; choose from {ROUTES}")
        if self.marginal_terms is not None:
            object.__setattr__(self, "marginal_terms", tuple(self.marginal_terms))
        if not 0 < self.clip_eps <= 0.1:
            raise ConfigError(f"clip_eps must lie in (0, 0.1], got {self.clip_eps}")
        if self.terms is not None:
            object.__setattr__(self, "terms", tuple(self.terms))
        for name in ("tol", "max_iter", "n_trees", "min_leaf"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_depth is not None and self.max_depth <= 0:
            raise ConfigError("max_depth must be positive")
        if self.l2 < 0 or self.alpha < 0:
            raise ConfigError("l2 and alpha must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("terms", "marginal_terms"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LearnerSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown learner settings: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class NuisanceSpecs:
    """One :class:`LearnerSpec` per nuisance function."""

    q: LearnerSpec = field(default_factory=lambda: LearnerSpec(profile="none"))
    lam: LearnerSpec = field(default_factory=LearnerSpec)
    pi: LearnerSpec = field(default_factory=LearnerSpec)

    @classmethod
    def uniform(cls, spec: LearnerSpec) -> "NuisanceSpecs":
        return cls(replace(spec, profile="none"), spec, spec)

    def reseeded(self, seed: int) -> "NuisanceSpecs":
        return NuisanceSpecs(
            replace(self.q, seed=seed), replace(self.lam, seed=seed + 1), replace(self.pi, seed=seed + 2)
        )

    def to_dict(self) -> dict:
        return {"q": self.q.to_dict(), "lambda": self.lam.to_dict(), "pi": self.pi.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NuisanceSpecs":
        default = d.get("default", {})
        q = {"profile": "none", **default, **d.get("q", {})}
        lam = {**default, **d.get("lambda", {})}
        pi = {**default, **d.get("pi", {})}
        return cls(LearnerSpec.from_dict(q), LearnerSpec.from_dict(lam), LearnerSpec.from_dict(pi))


def _build_learner(spec: LearnerSpec):
    if spec.family == "multinomial-logistic":
        return MultinomialLogit(l2=spec.l2, tol=spec.tol, max_iter=spec.max_iter)
    if spec.family == "frequency-table":
        return FrequencyTable(alpha=spec.alpha)
    return ForestClassifier(spec.n_trees, spec.max_depth, spec.min_leaf, spec.seed)


@dataclass
class _Classifier:
    """Learner bound to its feature map; ``family`` picks the feature view."""

    spec: LearnerSpec
    features: FeatureMap
    learner: Any
    n_classes: int
    n_clipped: int = 0
    n_fallback: int = 0

    def _inputs(self, profile, v):
        if isinstance(self.learner, ConstantClassifier):
            return np.zeros((len(v), 1))
        if self.spec.family == "frequency-table":
            return self.features.strata_keys(profile, v)
        if self.spec.family == "tree-ensemble":
            return self.features.raw_features(profile, v)
        return self.features.design(profile, v)

    def fit(self, profile, v, labels):
        observed = np.bincount(labels, minlength=self.n_classes)
        if np.count_nonzero(observed) == 1:
            self.learner = ConstantClassifier(observed / observed.sum())
        elif self.spec.family == "multinomial-logistic":
            self.features.fit_scaling(v)
        self.learner.fit(self._inputs(profile, v), labels, self.n_classes)
        return self

    def proba(self, profile, v) -> np.ndarray:
        p = self.learner.predict_proba(self._inputs(profile, v))
        self.n_fallback += getattr(self.learner, "n_fallback_", 0)
        p, clipped = clip_simplex(p, self.spec.clip_eps)
        self.n_clipped += clipped
        return p


def _make_classifier(schema, spec, profile_mode, n_classes, terms=None, with_x=False):
    if terms is None:
        terms = spec.terms
    if terms is None:
        terms = tuple(schema.v_names) + (tuple(c.name for c in schema.x_columns) if with_x else ())
    features = FeatureMap(schema, terms, profile_mode, with_x)
    return _Classifier(spec, features, _build_learner(spec), n_classes)


@dataclass
class QModel:
    """Profile distribution given v, over the 2^K - 1 nonzero profiles."""

    schema: CovariateSchema
    clf: _Classifier


@dataclass
class LambdaModel:
    """Joint x-level distribution given (profile, v) among complete cases.

    ``clf`` is the direct classifier; the Bayes route instead holds
    ``profile_clf`` (profile given v and x) and ``x_clf`` (x given v).
    """

    schema: CovariateSchema
    clf: _Classifier | None
    profile_clf: _Classifier | None = None
    x_clf: _Classifier | None = None
    clip_eps: float = 1e-3
    n_clipped: int = 0

    @property
    def n_fallback(self) -> int:
        parts = (self.clf, self.profile_clf, self.x_clf)
        return sum(c.n_fallback for c in parts if c is not None)

    @property
    def clipped(self) -> int:
        parts = (self.clf, self.profile_clf, self.x_clf)
        return self.n_clipped + sum(c.n_clipped for c in parts if c is not None)


@dataclass
class PiModel:
    """P(x observed | profile, v); exactly 1 when training had no missingness."""

    schema: CovariateSchema
    clf: _Classifier | None
    clip_eps: float
    n_clipped: int = 0


def _annotate(exc: PopmissError, what: str) -> PopmissError:
    exc.args = (f"{what}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
    return exc


def fit_q(train: Dataset, spec: LearnerSpec) -> QModel:
    clf = _make_classifier(train.schema, spec, "none", train.schema.n_profiles)
    try:
        clf.fit(None, train.v, train.profile)
    except PopmissError as exc:
        raise _annotate(exc, "q-model") from None
    return QModel(train.schema, clf)


def fit_lambda(train: Dataset, spec: LearnerSpec) -> LambdaModel:
    if not train.r.any():
        raise DataError("lambda-model: no complete cases to fit on")
    cc = train.subset(train.r)
    schema = train.schema
    try:
        if spec.route == "bayes":
            profile_clf = _make_classifier(schema, spec, "none", schema.n_profiles, with_x=True)
            profile_clf.fit(None, np.hstack([cc.v, cc.x]), cc.profile)
            marginal = spec.marginal_terms if spec.marginal_terms is not None else tuple(schema.v_names)
            x_clf = _make_classifier(schema, spec, "none", schema.x_support_size, terms=marginal)
            x_clf.fit(None, cc.v, cc.x_joint)
            return LambdaModel(schema, None, profile_clf, x_clf, spec.clip_eps)
        clf = _make_classifier(schema, spec, spec.profile, schema.x_support_size)
        clf.fit(cc.profile, cc.v, cc.x_joint)
    except PopmissError as exc:
        raise _annotate(exc, "lambda-model") from None
    return LambdaModel(schema, clf, clip_eps=spec.clip_eps)


def fit_pi(train: Dataset, spec: LearnerSpec) -> PiModel:
    if train.r.all():
        return PiModel(train.schema, None, spec.clip_eps)
    clf = _make_classifier(train.schema, spec, spec.profile, 2)
    try:
        clf.fit(train.profile, train.v, train.r.astype(np.int64))
    except PopmissError as exc:
        raise _annotate(exc, "pi-model") from None
    return PiModel(train.schema, clf, spec.clip_eps)


def _check_v(schema: CovariateSchema, v) -> np.ndarray:
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape[1] != len(schema.v_columns):
        raise DataError(f"expected {len(schema.v_columns)} v columns, got {v.shape[1]}")
    return v


def predict_q(model: QModel, v) -> np.ndarray:
    """(n, P) profile probabilities at each row of ``v``."""
    v = _check_v(model.schema, v)
    return model.clf.proba(None, v)


def _all_profiles(schema, v):
    P = schema.n_profiles
    n = len(v)
    return np.tile(np.arange(P), n), np.repeat(v, P, axis=0)


def predict_lambda(model: LambdaModel, v, profile=None) -> np.ndarray:
    """x-level probabilities.

    With ``profile`` given, returns (n, L) at the paired (profile, v) rows;
    otherwise (n, P, L) for every profile at each v.
    """
    v = _check_v(model.schema, v)
    if model.clf is None:
        lam = _invert_lambda(model, v)
        if profile is not None:
            return lam[np.arange(len(v)), np.asarray(profile)]
        return lam
    if profile is not None:
        return model.clf.proba(np.asarray(profile), v)
    prof, vv = _all_profiles(model.schema, v)
    return model.clf.proba(prof, vv).reshape(len(v), model.schema.n_profiles, -1)


def _invert_lambda(model: LambdaModel, v: np.ndarray) -> np.ndarray:
    """lambda_x(y, v) proportional to P(y | v, x) P(x | v), normalized over x."""
    schema = model.schema
    n, L = len(v), schema.x_support_size
    codes = np.array(np.unravel_index(np.arange(L), schema.x_shape), dtype=float).T
    vx = np.hstack([np.repeat(v, L, axis=0), np.tile(codes, (n, 1))])
    p_y = model.profile_clf.proba(None, vx).reshape(n, L, -1)
    p_x = model.x_clf.proba(None, v)
    joint = np.transpose(p_y * p_x[:, :, None], (0, 2, 1))
    joint = joint / joint.sum(axis=2, keepdims=True)
    lam, clipped = clip_simplex(joint.reshape(-1, L), model.clip_eps)
    model.n_clipped += clipped
    return lam.reshape(n, -1, L)


def predict_pi(model: PiModel, v, profile=None) -> np.ndarray:
    """Observation probabilities clipped to [clip_eps, 1].

    Shape (n,) with ``profile`` given, else (n, P).
    """
    v = _check_v(model.schema, v)
    if profile is not None:
        prof, vv, shape = np.asarray(profile), v, (len(v),)
    else:
        prof, vv = _all_profiles(model.schema, v)
        shape = (len(v), model.schema.n_profiles)
    if model.clf is None:
        return np.ones(shape)
    p1 = model.clf.learner.predict_proba(model.clf._inputs(prof, vv))[:, 1]
    model.n_clipped += int(np.sum(p1 < model.clip_eps))
    return np.clip(p1, model.clip_eps, 1.0).reshape(shape)


@dataclass
class FittedNuisances:
    """The three fitted models; ``evaluate`` yields per-unit nuisances."""

    q: QModel
    lam: LambdaModel
    pi: PiModel
    gamma_cap: float = 1e4

    def evaluate(self, data: Dataset):
        from .identification import UnitNuisances

        return UnitNuisances.from_components(
            predict_q(self.q, data.v),
            predict_lambda(self.lam, data.v),
            predict_pi(self.pi, data.v),
            gamma_cap=self.gamma_cap,
        )

    def counters(self) -> dict:
        return {
            "clipped_q": self.q.clf.n_clipped,
            "clipped_lambda": self.lam.clipped,
            "clipped_pi": self.pi.n_clipped,
            "lambda_fallbacks": self.lam.n_fallback,
        }


def fit_nuisances(train: Dataset, specs: NuisanceSpecs, gamma_cap: float = 1e4) -> FittedNuisances:
    return FittedNuisances(
        fit_q(train, specs.q), fit_lambda(train, specs.lam), fit_pi(train, specs.pi), gamma_cap
    )
