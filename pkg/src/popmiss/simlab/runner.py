"""Replicate execution, the imputation comparator, and summary metrics."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..crossfit import crossfit_nuisances, split_folds
from ..errors import DataError, PopmissError
from ..estimators import ci_psi_inv, population_estimate
from ..model import Dataset
from ..nuisance import LearnerSpec, fit_lambda, predict_lambda
from .dgp import (
    OracleNuisances,
    SimConfig,
    apply_missingness,
    calibrate_intercept,
    calibrate_missingness,
    generate_population,
)

log = logging.getLogger(__name__)

METHODS = ("mar-plugin", "mar-onestep", "imputation-plugin", "imputation-onestep")
AGGREGATE_COLUMNS = ("missing_rate", "method", "bias", "rmse", "coverage")


def impute_comparator(data: Dataset, spec: LearnerSpec, seed: int = 0) -> Dataset:
    """Single imputation of missing x by the most probable level.

    A classifier of x on (profile, v) is fitted to the complete cases and
    each incomplete unit receives its predicted mode. The result is marked
    fully observed. Data without missingness are returned unchanged.
    """
    if data.r.all():
        return data
    if not data.r.any():
        raise DataError("cannot impute without complete cases")
    model = fit_lambda(data, replace(spec, seed=seed))
    miss = np.flatnonzero(~data.r)
    proba = predict_lambda(model, data.v[miss], data.profile[miss])
    joint = np.argmax(proba, axis=1)
    codes = np.array(np.unravel_index(joint, data.schema.x_shape)).T
    x = np.array(data.x)
    x[miss] = codes
    return data.with_x(x)


def replicate_seed(*parts: int) -> int:
    """Integer seed derived from (master seed, replicate, stream)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class ReplicateRecord:
    replicate: int
    missing_rate: float
    method: str
    n_captured: int
    n_hat: float
    ci_low: float
    ci_high: float
    psi_inv: float
    sigma2: float
    covered: bool

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def run_one(config: SimConfig, a: float, rate: float, replicate: int,
            methods: Sequence[str] = METHODS, oracle: bool = False) -> list[ReplicateRecord]:
    """Generate, censor and estimate a single replicate."""
    pop = generate_population(config, a, np.random.default_rng(replicate_seed(config.seed, replicate, 0)))
    data = apply_missingness(pop.captured_part(), rate, np.random.default_rng(replicate_seed(config.seed, replicate, 1)))
    plan = split_folds(data, config.k_folds, replicate_seed(config.seed, replicate, 2))
    arms = {}
    if any(m.startswith("mar") for m in methods):
        learners = OracleNuisances(config, a, rate, config.gamma_cap) if oracle else config.learners
        arms["mar"] = (data, crossfit_nuisances(data, plan, learners, config.gamma_cap))
    if any(m.startswith("imputation") for m in methods):
        completed = impute_comparator(data, config.imputer, replicate_seed(config.seed, replicate, 3))
        arms["imputation"] = (completed, crossfit_nuisances(completed, plan, config.learners, config.gamma_cap))
    records = []
    for arm, (d, fit) in arms.items():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            plugin, onestep = fit.estimates(d)
        for name, est in (("plugin", plugin), ("onestep", onestep)):
            method = f"{arm}-{name}"
            if method not in methods:
                continue
            pe = population_estimate(est, config.alpha)
            records.append(ReplicateRecord(
                replicate, rate, method, d.N, pe.n_hat, pe.ci_low, pe.ci_high,
                est.psi_inv, est.sigma2, pe.covers(config.n_pop),
            ))
    return records


@dataclass
class MethodSummary:
    missing_rate: float
    method: str
    bias: float
    rmse: float
    coverage: float
    mean_error: float
    n_success: int


def summarize(records: Iterable[ReplicateRecord], n_true: float) -> list[MethodSummary]:
    """Mean absolute error, RMSE and interval coverage per (rate, method)."""
    groups: dict[tuple[float, str], list[ReplicateRecord]] = {}
    for rec in records:
        groups.setdefault((rec.missing_rate, rec.method), []).append(rec)
    out = []
    for (rate, method), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], METHODS.index(kv[0][1]))):
        err = np.array([r.n_hat - n_true for r in recs])
        out.append(MethodSummary(
            rate, method,
            bias=float(np.mean(np.abs(err))),
            rmse=float(math.sqrt(np.mean(err**2))),
            coverage=float(np.mean([r.covered for r in recs])),
            mean_error=float(np.mean(err)),
            n_success=len(recs),
        ))
    return out


@dataclass
class SimResult:
    config: SimConfig
    intercept: float
    rates: dict[float, float]
    records: list[ReplicateRecord]
    failures: list[dict] = field(default_factory=list)

    @property
    def summary(self) -> list[MethodSummary]:
        return summarize(self.records, self.config.n_pop)

    def metric(self, method: str, rate: float, name: str) -> float:
        for s in self.summary:
            if s.method == method and math.isclose(s.missing_rate, rate):
                return getattr(s, name)
        raise KeyError((method, rate))

    def write_csv(self, out_dir: str | Path) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        per_rep = out_dir / "replicates.csv"
        with per_rep.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(ReplicateRecord.__dataclass_fields__))
            writer.writeheader()
            for rec in self.records:
                writer.writerow(rec.as_row())
        agg = out_dir / "aggregate.csv"
        with agg.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(AGGREGATE_COLUMNS)
            for s in self.summary:
                writer.writerow([s.missing_rate, s.method, s.bias, s.rmse, s.coverage])
        return per_rep, agg


def _worker(args):
    config, a, rate, rep, methods, oracle = args
    try:
        return run_one(config, a, rate, rep, methods, oracle), None
    except PopmissError as exc:
        return [], {"replicate": rep, "missing_rate": rate, "error": str(exc)}


def run_replicates(config: SimConfig, rates: Sequence[float] | None = None,
                   methods: Sequence[str] = METHODS, oracle: bool = False,
                   workers: int = 1) -> SimResult:
    """Run ``config.replicates`` replicates at each missingness rate.

    Replicate ``i`` uses the same population (and nested missingness draws)
    at every rate. Failed replicates are recorded and skipped. With
    ``workers > 1`` replicates run in separate processes; results do not
    depend on the worker count.
    """
    rates = [config.missing_target] if rates is None else list(rates)
    a = calibrate_intercept(config)
    base_rates = {}
    for rate in rates:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            base_rates[rate] = calibrate_missingness(replace(config, missing_target=rate), a)
    jobs = [(config, a, base_rates[rate], rep, tuple(methods), oracle)
            for rate in rates for rep in range(config.replicates)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            outcomes = list(pool.map(_worker, jobs, chunksize=4))
    else:
        outcomes = [_worker(job) for job in jobs]
    records, failures = [], []
    by_base = {v: k for k, v in base_rates.items()}
    for recs, failure in outcomes:
        for rec in recs:
            rec.missing_rate = by_base[rec.missing_rate]
        records.extend(recs)
        if failure:
            failure["missing_rate"] = by_base[failure["missing_rate"]]
            failures.append(failure)
    for f in failures:
        log.warning("replicate %(replicate)s at rate %(missing_rate)s failed: %(error)s", f)
    return SimResult(config, a, base_rates, records, failures)


def oracle_psi_coverage(config: SimConfig, replicates: int | None = None, rate: float = 0.0) -> dict:
    """Coverage of the true 1/psi by one-step intervals built from true nuisances."""
    a = calibrate_intercept(config)
    base = calibrate_missingness(replace(config, missing_target=rate), a)
    oracle = OracleNuisances(config, a, base, config.gamma_cap)
    truth = oracle.true_psi_inv()
    hits, estimates = [], []
    for rep in range(replicates or config.replicates):
        pop = generate_population(config, a, np.random.default_rng(replicate_seed(config.seed, rep, 0)))
        data = apply_missingness(pop.captured_part(), base, np.random.default_rng(replicate_seed(config.seed, rep, 1)))
        _, onestep = crossfit_nuisances(data, None, oracle).estimates(data)
        lo, hi = ci_psi_inv(onestep, config.alpha)
        hits.append(lo <= truth <= hi)
        estimates.append(onestep.psi_inv)
    return {
        "true_psi_inv": truth,
        "coverage": float(np.mean(hits)),
        "mean_estimate": float(np.mean(estimates)),
        "sd_estimate": float(np.std(estimates, ddof=1)),
        "replicates": len(hits),
    }
