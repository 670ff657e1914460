"""Copula-based sample-selection models for binary outcomes and prevalence estimation."""

__version__ = "0.1.0"

from .copulas import CopulaFamily, CopulaSpec, copula_cdf, copula_partial_u, copula_partial_v, kendall_tau
from .data import CountTable, load_count_table, make_count_table, validate_against_population
from .design import Factor, Intercept, Linear, RandomEffect, Smooth, TermSpec, build_design
from .errors import DataError, DomainError, FitError
from .estimators import (
    PrevalenceEstimate,
    fit_propensity,
    gh_prevalence,
    gh_prevalence_by_domain,
    naive_prevalence,
    posterior_interval,
    ps_weighted_prevalence,
)
from .links import LinkFunction
from .model import FitOptions, FitResult, ModelSpec, ParamVector, fit, loglik, loglik_gradient, model_grid
from .simulate import DgpConfig, evaluate_estimators, inspection_config, sample_copula_pair, simulate_population
