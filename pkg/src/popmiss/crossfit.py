"""Sample splitting and cross-fitted nuisance evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import ConfigError, PopmissError
from .estimators import PsiEstimate, onestep_psi_inv, plugin_psi_inv
from .identification import UnitNuisances
from .model import Dataset
from .nuisance import NuisanceSpecs, fit_nuisances


class NuisanceSource(Protocol):
    """Anything that evaluates per-unit nuisances without fitting (oracles)."""

    def evaluate(self, data: Dataset) -> UnitNuisances: ...


@dataclass(frozen=True)
class FoldPlan:
    k_folds: int
    assignment: np.ndarray = field(repr=False)
    seed: int

    @property
    def fold_sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.k_folds).tolist()

    def summary(self) -> dict:
        return {
            "k_folds": self.k_folds,
            "seed": self.seed,
            "fold_sizes": self.fold_sizes,
            "stratified_by": "capture profile",
            "pooling": "single mean over all units",
        }


def split_folds(data: Dataset, k_folds: int, seed: int) -> FoldPlan:
    """Profile-stratified assignment with fold sizes differing by at most one.

    Units are shuffled, stably sorted by profile, then dealt round-robin, so
    every profile is spread evenly across folds.
    """
    if k_folds < 2:
        raise ConfigError(f"need at least two folds, got {k_folds}")
    if data.N < k_folds:
        raise ConfigError(f"cannot split {data.N} units into {k_folds} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(data.N)
    order = order[np.argsort(data.profile[order], kind="stable")]
    assignment = np.empty(data.N, dtype=np.int64)
    assignment[order] = np.arange(data.N) % k_folds
    return FoldPlan(k_folds, assignment, seed)


def fold_seed(plan: FoldPlan, fold: int) -> int:
    return int(np.random.SeedSequence([plan.seed, fold]).generate_state(1)[0])


@dataclass
class CrossfitResult:
    nuisances: UnitNuisances
    plan: FoldPlan | None
    counters: dict

    def estimates(self, data: Dataset) -> tuple[PsiEstimate, PsiEstimate]:
        """(plug-in, one-step); the plug-in borrows the one-step variance."""
        onestep = onestep_psi_inv(data, self.nuisances)
        plugin = plugin_psi_inv(data, self.nuisances).with_variance(onestep.sigma2)
        return plugin, onestep


def crossfit_nuisances(
    data: Dataset,
    plan: FoldPlan | None,
    learners: NuisanceSpecs | NuisanceSource,
    gamma_cap: float = 1e4,
) -> CrossfitResult:
    """Nuisances for every unit, each fitted without that unit's fold.

    A ``learners`` object exposing ``evaluate`` (for instance the true
    simulation nuisances) bypasses fitting and is applied to all units.
    """
    if not isinstance(learners, NuisanceSpecs):
        nuis = learners.evaluate(data)
        return CrossfitResult(nuis, plan, {"gamma_capped": nuis.n_gamma_capped})
    if plan is None:
        raise ConfigError("a fold plan is required when nuisances are fitted")
    parts = []
    counters = {"clipped_q": 0, "clipped_lambda": 0, "clipped_pi": 0, "lambda_fallbacks": 0}
    for j in range(plan.k_folds):
        test = np.flatnonzero(plan.assignment == j)
        train = np.flatnonzero(plan.assignment != j)
        try:
            fitted = fit_nuisances(
                data.subset(train), learners.reseeded(fold_seed(plan, j)), gamma_cap
            )
            nuis = fitted.evaluate(data.subset(test))
        except PopmissError as exc:
            exc.args = (f"fold {j}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        for key, value in fitted.counters().items():
            counters[key] += value
        parts.append((test, nuis))
    merged = UnitNuisances.assemble(parts, data.N)
    counters["gamma_capped"] = merged.n_gamma_capped
    return CrossfitResult(merged, plan, counters)


def crossfit_estimate(
    data: Dataset,
    plan: FoldPlan | None,
    learners: NuisanceSpecs | NuisanceSource,
    method: str = "onestep",
    gamma_cap: float = 1e4,
) -> PsiEstimate:
    if method not in ("plugin", "onestep"):
        raise ConfigError(f"unknown method {method!r}")
    plugin, onestep = crossfit_nuisances(data, plan, learners, gamma_cap).estimates(data)
    return plugin if method == "plugin" else onestep
