"""Population size estimation from multi-list capture-recapture data with
missing-at-random covariates."""

__version__ = "0.1.0"

from .crossfit import FoldPlan, crossfit_estimate, crossfit_nuisances, split_folds
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    NumericError,
    PopmissError,
    UndefinedEstimateError,
)
from .estimators import (
    PopulationEstimate,
    PsiEstimate,
    ci_psi_inv,
    eif_values,
    lincoln_petersen,
    onestep_psi_inv,
    plugin_psi_inv,
    population_estimate,
)
from .identification import UnitNuisances, cond_inv_gamma_given_v, gamma_inv, q_full_under_mar
from .model import CaptureProfile, Column, CovariateSchema, Dataset, Observation, validate_dataset
from .nuisance import LearnerSpec, NuisanceSpecs, fit_nuisances
