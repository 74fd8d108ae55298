"""Synthetic two-list study: data generation, replicates, remainder diagnostics."""

from .dgp import (
    SIM_SCHEMA,
    OracleNuisances,
    SimConfig,
    apply_missingness,
    calibrate_intercept,
    calibrate_missingness,
    capture_fraction,
    generate_population,
    mc_capture_fraction,
)
from .runner import METHODS, SimResult, impute_comparator, oracle_psi_coverage, run_replicates
from .remainder import PerturbedNuisances, RemainderDiagnostic, oracle_sample, perturbation_slope, r2_diagnostic
