"""Probabilistic classifiers used for the nuisance fits.

Three families share a tiny interface: ``fit(features, labels, n_classes)``
and ``predict_proba(features)``. Features are produced by
:class:`FeatureMap`, which turns (profile, v) pairs into either a numeric
design matrix or a tuple of discrete stratification keys.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import logsumexp, softmax

from .errors import ConfigError, ConvergenceError, DataError
from .model import CovariateSchema

_POWER = re.compile(r"^(?P<name>[^\^]+)\^(?P<deg>\d+)$")


def clip_simplex(p: np.ndarray, eps: float) -> tuple[np.ndarray, int]:
    """Floor every row of ``p`` at ``eps`` and renormalize to sum 1.

    Floored entries stay exactly at ``eps``; the remaining mass is rescaled,
    repeating until no rescaled entry drops under the floor. When the class
    count makes ``eps`` infeasible the floor shrinks to ``0.5 / n_classes``.
    Returns the clipped array and the number of floored entries.
    """
    p = np.array(p, dtype=float)
    squeeze = p.ndim == 1
    p = np.atleast_2d(p)
    C = p.shape[-1]
    eps = min(eps, 0.5 / C)
    p = np.where(np.isfinite(p) & (p > 0), p, 0.0)
    low = np.zeros(p.shape, dtype=bool)
    for _ in range(C):
        new_low = low | (p < eps)
        free = np.where(new_low, 0.0, p)
        free_mass = free.sum(axis=-1, keepdims=True)
        target = 1.0 - eps * new_low.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            scaled = np.where(free_mass > 0, free * (target / free_mass), 0.0)
        p = np.where(new_low, eps, scaled)
        if np.array_equal(new_low, low):
            break
        low = new_low
    out = p[0] if squeeze else p
    return out, int(low.sum())


def _parse_term(term: str, columns):
    """A term is ``name``, ``name^d`` or a ``:``-joined product of those."""
    names = [c.name for c in columns]
    factors = []
    for part in term.split(":"):
        part = part.strip()
        m = _POWER.match(part)
        name, deg = (m["name"].strip(), int(m["deg"])) if m else (part, 1)
        if name not in names:
            raise ConfigError(f"term {term!r}: unknown column {name!r}")
        col = columns[names.index(name)]
        if col.is_categorical and deg != 1:
            raise ConfigError(f"term {term!r}: cannot raise categorical {name!r} to a power")
        factors.append((names.index(name), col, deg))
    return factors


@dataclass
class FeatureMap:
    """Design construction for one nuisance model.

    Parameters
    ----------
    schema : CovariateSchema
    terms : tuple of str
        V terms: raw numeric columns, one-hot categorical columns (first level
        dropped), powers ``age^2`` and products ``sex:age``.
    profile : {"none", "additive", "interact"}
        How the capture profile enters. ``interact`` fits a separate
        coefficient block per profile.
    with_x : bool
        Covariate matrices carry the x level codes after the v columns, and
        terms may name x columns.
    """

    schema: CovariateSchema
    terms: tuple[str, ...]
    profile: str = "none"
    with_x: bool = False
    _mean: np.ndarray | None = field(default=None, repr=False)
    _scale: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.profile not in ("none", "additive", "interact"):
            raise ConfigError(f"unknown profile mode {self.profile!r}")
        columns = self.schema.v_columns + (self.schema.x_columns if self.with_x else ())
        self._parsed = [_parse_term(t, columns) for t in self.terms]

    def base_columns(self, v: np.ndarray) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, dtype=float))
        cols = []
        for factors in self._parsed:
            block = np.ones((len(v), 1))
            for j, col, deg in factors:
                if col.is_categorical:
                    codes = v[:, j].astype(np.int64)
                    dummies = (codes[:, None] == np.arange(1, len(col.levels))[None, :]).astype(float)
                    block = (block[:, :, None] * dummies[:, None, :]).reshape(len(v), -1)
                else:
                    block = block * (v[:, j:j + 1] ** deg)
            cols.append(block)
        return np.hstack(cols) if cols else np.empty((len(v), 0))

    def fit_scaling(self, v: np.ndarray) -> "FeatureMap":
        base = self.base_columns(v)
        mean = base.mean(axis=0)
        scale = base.std(axis=0)
        binary = np.all((base == 0) | (base == 1), axis=0)
        mean[binary] = 0.0
        scale[binary | (scale == 0)] = 1.0
        self._mean, self._scale = mean, scale
        return self

    def design(self, profile: np.ndarray | None, v: np.ndarray) -> np.ndarray:
        """Numeric design with leading intercept column(s)."""
        base = self.base_columns(v)
        if self._mean is not None:
            base = (base - self._mean) / self._scale
        n = len(base)
        block = np.hstack([np.ones((n, 1)), base])
        if self.profile == "none":
            return block
        P = self.schema.n_profiles
        onehot = np.zeros((n, P))
        onehot[np.arange(n), profile] = 1.0
        if self.profile == "additive":
            return np.hstack([block, onehot[:, 1:]])
        return (onehot[:, :, None] * block[:, None, :]).reshape(n, -1)

    def raw_features(self, profile: np.ndarray | None, v: np.ndarray) -> np.ndarray:
        """Unscaled features for tree learners: profile one-hot plus V terms."""
        base = self.base_columns(v)
        if self.profile == "none":
            return base if base.shape[1] else np.zeros((len(base), 1))
        onehot = np.zeros((len(base), self.schema.n_profiles))
        onehot[np.arange(len(base)), profile] = 1.0
        return np.hstack([onehot, base])

    def strata_keys(self, profile: np.ndarray | None, v: np.ndarray) -> list[np.ndarray]:
        """Keys from finest to coarsest: (profile, v), (profile,), ().

        Each key is an int array; the v part uses every column named in the
        terms (numeric values are treated as labels).
        """
        v = np.atleast_2d(np.asarray(v, dtype=float))
        used = sorted({j for factors in self._parsed for j, _, _ in factors})
        n = len(v)
        levels = []
        if self.profile != "none":
            levels.append(np.asarray(profile, dtype=float)[:, None])
        fine = np.hstack(levels + [v[:, used]]) if (levels or used) else np.zeros((n, 0))
        keys = [fine]
        if self.profile != "none" and used:
            keys.append(levels[0])
        keys.append(np.zeros((n, 0)))
        return keys


class MultinomialLogit:
    """Ridge-penalized multinomial logistic regression.

    Minimizes ``mean NLL + l2/2 * ||W||^2`` with the first class as the
    reference. Small problems use damped Newton steps with backtracking;
    large ones (more than ``newton_max_params`` free parameters) switch to
    L-BFGS. ``loss_history_`` records the objective at each accepted iterate.
    """

    def __init__(self, l2=1e-4, tol=1e-8, max_iter=100, newton_max_params=400):
        self.l2 = l2
        self.tol = tol
        self.max_iter = max_iter
        self.newton_max_params = newton_max_params

    def _objective(self, w, X, Y):
        d = X.shape[1]
        W = w.reshape(d, -1)
        eta = np.hstack([np.zeros((len(X), 1)), X @ W])
        lse = logsumexp(eta, axis=1)
        nll = (lse - np.sum(eta * Y, axis=1)).mean()
        P = np.exp(eta - lse[:, None])
        grad = X.T @ (P[:, 1:] - Y[:, 1:]) / len(X) + self.l2 * W
        return nll + 0.5 * self.l2 * np.sum(W * W), grad.ravel(), P

    def fit(self, X, labels, n_classes):
        X = np.asarray(X, dtype=float)
        labels = np.asarray(labels, dtype=np.int64)
        n, d = X.shape
        self.n_classes_ = n_classes
        Y = np.zeros((n, n_classes))
        Y[np.arange(n), labels] = 1.0
        w = np.zeros(d * (n_classes - 1))
        if w.size > self.newton_max_params:
            return self._fit_lbfgs(w, X, Y)
        loss, grad, P = self._objective(w, X, Y)
        self.loss_history_ = [loss]
        C1 = n_classes - 1
        for it in range(1, self.max_iter + 1):
            gnorm = np.linalg.norm(grad)
            if gnorm < self.tol:
                break
            Pk = P[:, 1:]
            H = np.empty((d, C1, d, C1))
            for a in range(C1):
                for b in range(a, C1):
                    wts = Pk[:, a] * ((a == b) - Pk[:, b])
                    block = (X * wts[:, None]).T @ X / n
                    H[:, a, :, b] = block
                    H[:, b, :, a] = block
            H = H.reshape(d * C1, d * C1) + self.l2 * np.eye(d * C1)
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            t = 1.0
            while True:
                cand = w - t * step
                c_loss, c_grad, c_P = self._objective(cand, X, Y)
                if c_loss <= loss - 1e-4 * t * grad @ step or t < 1e-10:
                    break
                t *= 0.5
            if c_loss > loss:
                break
            w, loss, grad, P = cand, c_loss, c_grad, c_P
            self.loss_history_.append(loss)
        self.n_iter_ = len(self.loss_history_) - 1
        self.grad_norm_ = float(np.linalg.norm(grad))
        if self.grad_norm_ > max(self.tol, 1e-5):
            raise ConvergenceError(
                f"multinomial logit did not converge in {self.max_iter} iterations "
                f"(gradient norm {self.grad_norm_:.3g})",
                self.grad_norm_, self.n_iter_,
            )
        self.coef_ = w.reshape(d, C1)
        return self

    def _fit_lbfgs(self, w0, X, Y):
        history = []

        def fun(w):
            loss, grad, _ = self._objective(w, X, Y)
            return loss, grad

        history.append(fun(w0)[0])
        res = optimize.minimize(
            fun, w0, jac=True, method="L-BFGS-B",
            callback=lambda wk: history.append(fun(wk)[0]),
            options={"maxiter": self.max_iter * 20, "gtol": self.tol, "ftol": 1e-14},
        )
        self.loss_history_ = history
        self.n_iter_ = int(res.nit)
        self.grad_norm_ = float(np.linalg.norm(res.jac))
        if self.grad_norm_ > 1e-4:
            raise ConvergenceError(
                f"multinomial logit (L-BFGS) stopped with gradient norm {self.grad_norm_:.3g}",
                self.grad_norm_, self.n_iter_,
            )
        self.coef_ = res.x.reshape(X.shape[1], -1)
        return self

    def predict_proba(self, X):
        eta = np.hstack([np.zeros((len(X), 1)), np.asarray(X, dtype=float) @ self.coef_])
        return softmax(eta, axis=1)


class FrequencyTable:
    """Laplace-smoothed stratified class frequencies with backoff.

    ``fit`` takes a list of key matrices ordered finest to coarsest. A unit
    whose finest stratum was empty in training backs off to the first
    coarser stratum that was seen; ``n_fallback_`` counts those events at
    prediction time.
    """

    def __init__(self, alpha=0.5):
        if alpha < 0:
            raise ConfigError("smoothing alpha must be >= 0")
        self.alpha = alpha

    @staticmethod
    def _rows(keys):
        return [tuple(row) for row in keys.tolist()] if keys.shape[1] else [()] * len(keys)

    def fit(self, keys, labels, n_classes):
        labels = np.asarray(labels, dtype=np.int64)
        self.n_classes_ = n_classes
        self.tables_ = []
        for level in keys:
            table = {}
            for key, lab in zip(self._rows(level), labels):
                counts = table.get(key)
                if counts is None:
                    counts = table[key] = np.zeros(n_classes)
                counts[lab] += 1
            self.tables_.append(table)
        return self

    def predict_proba(self, keys):
        n = len(keys[0])
        out = np.empty((n, self.n_classes_))
        self.n_fallback_ = 0
        rows = [self._rows(level) for level in keys]
        cache = {}
        for i in range(n):
            signature = tuple(r[i] for r in rows)
            hit = cache.get(signature)
            if hit is None:
                for depth, (table, key) in enumerate(zip(self.tables_, signature)):
                    counts = table.get(key)
                    if counts is not None and counts.sum() > 0:
                        break
                else:
                    raise DataError("frequency table has no training data")
                smoothed = counts + self.alpha
                hit = cache[signature] = (smoothed / smoothed.sum(), depth)
            out[i] = hit[0]
            self.n_fallback_ += hit[1] > 0
        return out


class ForestClassifier:
    """Random forest probabilities (averaged leaf class frequencies)."""

    def __init__(self, n_trees=100, max_depth=None, min_leaf=5, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.seed = seed

    def fit(self, X, labels, n_classes):
        from sklearn.ensemble import RandomForestClassifier

        self.n_classes_ = n_classes
        self.forest_ = RandomForestClassifier(
            n_estimators=self.n_trees,
            max_depth=self.max_depth,
            min_samples_leaf=self.min_leaf,
            random_state=self.seed,
            n_jobs=1,
        ).fit(X, labels)
        return self

    def predict_proba(self, X):
        proba = self.forest_.predict_proba(X)
        out = np.zeros((len(X), self.n_classes_))
        out[:, self.forest_.classes_] = proba
        return out


class ConstantClassifier:
    """Fixed class distribution; used when training labels are degenerate."""

    def __init__(self, proba):
        self.proba = np.asarray(proba, dtype=float)
        self.n_classes_ = len(self.proba)

    def fit(self, *args, **kwargs):
        return self

    def predict_proba(self, X):
        return np.tile(self.proba, (len(X), 1))
