"""Command-line entry point: ``popmiss estimate | simulate | diagnose``.

Exit status is 0 on success, 1 for data or configuration errors and 2 for
numeric failures. On failure a partial report with an ``error`` section is
still written when an output path was given.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .crossfit import crossfit_nuisances, split_folds
from .errors import ConfigError, PopmissError, UndefinedEstimateError
from .estimators import ci_psi_inv, lincoln_petersen_from, population_estimate
from .io import IngestResult, Report, RunConfig, ingest_csv, load_config
from .nuisance import fit_nuisances
from .simlab.dgp import (
    OracleNuisances,
    apply_missingness,
    calibrate_intercept,
    calibrate_missingness,
    generate_population,
)
from .simlab.remainder import oracle_sample, perturbation_slope, r2_diagnostic, replicate_diagnostic
from .simlab.runner import replicate_seed, run_replicates

log = logging.getLogger("popmiss")


def _estimate_entry(est, alpha) -> dict:
    pe = population_estimate(est, alpha)
    lo, hi = ci_psi_inv(est, alpha)
    return {
        "psi_inv": est.psi_inv,
        "psi_inv_clamped": est.psi_inv_clamped,
        "psi_inv_ci": [lo, hi],
        "n_hat": pe.n_hat,
        "ci": [pe.ci_low, pe.ci_high],
        "sigma2": est.sigma2,
        "n_captured": est.n_captured,
        "variance_borrowed": est.variance_borrowed,
    }


def estimate_command(config: RunConfig, report: Report) -> Report:
    """Cross-fitted plug-in and one-step estimates for the configured CSV."""
    if config.schema is None:
        raise ConfigError("estimate needs a 'schema' section in the config")
    if not config.data:
        raise ConfigError("estimate needs a data file (--data or 'data' in the config)")
    ingest: IngestResult = ingest_csv(
        config.data, config.schema, config.impute_v, config.partial_x, config.seed
    )
    data = ingest.dataset
    report.metadata["ingest"] = ingest.counters()
    report.metadata["data"] = data.summary()
    report.metadata["missingness_by_profile"] = data.crosstab()

    plan = split_folds(data, config.k_folds, config.seed)
    report.metadata["folds"] = plan.summary()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = crossfit_nuisances(data, plan, config.learners, config.gamma_cap)
        plugin, onestep = fit.estimates(data)
    report.metadata["counters"] = fit.counters
    report.metadata["warnings"] = [str(w.message) for w in caught]
    report.estimates["plugin"] = _estimate_entry(plugin, config.alpha)
    report.estimates["plugin"]["approximate_interval"] = True
    report.estimates["onestep"] = _estimate_entry(onestep, config.alpha)
    if data.K == 2:
        try:
            report.estimates["lincoln_petersen"] = {"n_hat": lincoln_petersen_from(data)}
        except UndefinedEstimateError as exc:
            report.metadata["warnings"].append(str(exc))
    return report


def simulate_command(config: RunConfig, out_dir: Path, report: Report) -> Report:
    """Run the replicate grid and write per-replicate and aggregate CSVs."""
    start = time.perf_counter()
    result = run_replicates(config.simulation, config.rates, workers=config.workers)
    per_rep, agg = result.write_csv(out_dir)
    report.metadata.update({
        "intercept": result.intercept,
        "base_rates": {str(k): v for k, v in result.rates.items()},
        "failures": result.failures,
        "files": [str(per_rep), str(agg)],
        "seconds": time.perf_counter() - start,
    })
    report.estimates["summary"] = [
        {"missing_rate": s.missing_rate, "method": s.method, "bias": s.bias, "rmse": s.rmse,
         "coverage": s.coverage, "mean_error": s.mean_error, "n_success": s.n_success}
        for s in result.summary
    ]
    return report


def diagnose_command(config: RunConfig, report: Report) -> Report:
    """Remainder checks: oracle, controlled perturbations, and fitted learners."""
    sim = config.simulation
    settings = config.diagnostics
    a = calibrate_intercept(sim)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rate = calibrate_missingness(replace(sim, missing_target=settings.missing_target), a)
    oracle = OracleNuisances(sim, a, rate, sim.gamma_cap)
    sample = oracle_sample(sim, a, settings.sample_size, seed=sim.seed)
    report.estimates["oracle"] = r2_diagnostic(oracle, oracle, sample).to_dict()
    arms = {
        "all": {},
        "q_and_lambda": {"perturb_pi": False},
        "pi_only": {"perturb_q": False, "perturb_lambda": False},
    }
    scaling = {}
    for name, which in arms.items():
        entry = {}
        for field in ("exact", "bound_total"):
            with np.errstate(divide="ignore"):
                slope, values = perturbation_slope(oracle, sample, settings.eps_grid, field, **which)
            # a remainder at rounding level has no meaningful slope
            flat = max(abs(v) for v in values) < 1e-12
            entry[field] = {"slope": None if flat or not np.isfinite(slope) else slope, "values": values}
        scaling[name] = entry
    report.estimates["perturbation"] = {"eps_grid": list(settings.eps_grid), "arms": scaling}

    # fitted learners: train on an independent replicate, then score against a fresh sample
    rng = np.random.default_rng(replicate_seed(sim.seed, settings.replicate, 7))
    train = apply_missingness(generate_population(sim, a, rng).captured_part(), rate, rng)
    fitted = fit_nuisances(train, sim.learners, sim.gamma_cap)
    report.estimates["fitted"] = replicate_diagnostic(
        sim, a, rate, fitted, settings.replicate, settings.sample_size
    ).to_dict()
    report.metadata.update({"intercept": a, "base_rate": rate, "true_psi_inv": oracle.true_psi_inv()})
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popmiss",
        description="Population size from multi-list capture-recapture data with missing covariates.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="plug-in and one-step estimates for a CSV file")
    est.add_argument("--data", help="CSV file (overrides 'data' in the config)")
    est.add_argument("--config", required=True, help="JSON run configuration")
    est.add_argument("--seed", type=int)
    est.add_argument("--folds", type=int, dest="k_folds")
    est.add_argument("--alpha", type=float)
    est.add_argument("--impute-v", choices=("drop", "mode", "forest"), dest="impute_v")
    est.add_argument("--out", required=True, help="report path (JSON)")

    sim = sub.add_parser("simulate", help="Monte Carlo study over missingness rates")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out-dir", required=True)
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--workers", type=int)

    diag = sub.add_parser("diagnose", help="second-order remainder checks on the simulation")
    diag.add_argument("--config", required=True)
    diag.add_argument("--out", required=True)
    return parser


def run(args: argparse.Namespace) -> int:
    report = Report(command=args.command, version=__version__)
    if args.command == "simulate":
        out_path = Path(args.out_dir) / "summary.json"
    else:
        out_path = Path(args.out)
    try:
        config = load_config(args.config)
        if args.command == "estimate":
            config = config.override(data=args.data, seed=args.seed, k_folds=args.k_folds,
                                     alpha=args.alpha, impute_v=args.impute_v)
        elif args.command == "simulate":
            if args.replicates is not None:
                config = replace(config, simulation=replace(config.simulation, replicates=args.replicates))
            config = config.override(workers=args.workers)
        report.config = config.to_dict()
        if args.command == "estimate":
            estimate_command(config, report)
        elif args.command == "simulate":
            simulate_command(config, Path(args.out_dir), report)
        else:
            diagnose_command(config, report)
    except PopmissError as exc:
        report.error = {"type": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        print(f"popmiss {args.command}: {exc}", file=sys.stderr)
        _try_write(report, out_path)
        return exc.exit_code
    report.write(out_path)
    log.info("wrote %s", out_path)
    return 0


def _try_write(report: Report, path: Path) -> None:
    try:
        report.write(path)
    except OSError as exc:
        print(f"popmiss: could not write partial report to {path}: {exc}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
