"""Closed-population size estimation from multi-list capture-recapture data
with latent classes whose weights depend on individual covariates."""

from .config import ConfigError, load_model, load_sim_spec
from .data import Dataset, DataError, load_dataset, stratify
from .estimate import FitOptions, FitResult, fit, fit_multistart, profile_fit
from .inference import identifiability_check, profile_ci_N, profile_expected_info
from .likelihood import Params, log_likelihood, score_beta
from .model import ModelSpec, loglinear_design, recursive_design
from .tau import solve_tau

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "Dataset", "FitOptions", "FitResult", "ModelSpec", "Params",
    "fit", "fit_multistart", "identifiability_check", "load_dataset", "load_model",
    "load_sim_spec", "log_likelihood", "loglinear_design", "profile_ci_N", "profile_expected_info",
    "profile_fit", "recursive_design", "score_beta", "solve_tau", "stratify",
]
