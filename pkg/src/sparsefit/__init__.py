"""Bayesian fitting of a delayed two-compartment growth model to sparse data.

Inference runs in two stages: a Gibbs/Metropolis sampler on a linearized
state space model, then weighted ABC against the exact stochastic model with
a kernel density proposal built from the first-stage chain.
"""

from ._backend import BACKEND
from .abc import (AbcConfig, PriorProposal, ProposalMixture, ThetaSample, WeightedSample,
                  fit_kde_proposal, resample_weighted, run_abc)
from .config import RunConfig, load_config
from .errors import (BudgetExceededError, ComputationError, ConfigurationError,
                     FilterDivergenceError, SparsefitError, StageError, ValidationError)
from .io import load_observations
from .learnability import learnability_report, relative_entropy
from .mcmc import McmcChain, McmcConfig, ekf_forward_filter, ffbs_sample, run_mcmc
from .model import (DelayParams, NoiseParams, ObservationSet, RateParams, ThetaParams, observe,
                    study_schedule, simulate_trajectory, to_dimensionless)
from .pipeline import predictive_bands, run_fit
from .priors import PriorSpec, sample_prior

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AbcConfig", "PriorProposal", "ProposalMixture", "ThetaSample", "WeightedSample",
    "fit_kde_proposal", "resample_weighted", "run_abc", "RunConfig", "load_config",
    "BudgetExceededError", "ComputationError", "ConfigurationError", "FilterDivergenceError",
    "SparsefitError", "StageError", "ValidationError", "load_observations",
    "learnability_report", "relative_entropy", "McmcChain", "McmcConfig", "ekf_forward_filter",
    "ffbs_sample", "run_mcmc", "DelayParams", "NoiseParams", "ObservationSet", "RateParams",
    "ThetaParams", "observe", "study_schedule", "simulate_trajectory", "to_dimensionless",
    "predictive_bands", "run_fit", "PriorSpec", "sample_prior",
]
