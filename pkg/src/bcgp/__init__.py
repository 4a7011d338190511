"""Bayesian composite Gaussian process emulator.

A smooth global GP plus a rougher local GP, weighted by ``omega`` and scaled
by a latent log-GP variance process, fitted by Metropolis-within-Gibbs.
"""
from .kernels import (CorrelationParams, CovMatrix, IllConditionedCovarianceError,
                      build_cov_matrix, build_cross_cov, gauss_corr, pd_logdet, pd_solve)
from .model import (DegenerateDataError, HyperParams, ModelState, TrainingSet, default_state,
                    log_latent_variance_density, log_likelihood, log_posterior, log_prior,
                    standardize)
from .mcmc import ChainConfig, ChainOutput, ProposalWidths, run_chain
from .predict import PredictionResult, predict

__version__ = "0.1.0"

__all__ = [
    "ChainConfig", "ChainOutput", "CorrelationParams", "CovMatrix", "DegenerateDataError",
    "HyperParams", "IllConditionedCovarianceError", "ModelState", "PredictionResult",
    "ProposalWidths", "TrainingSet", "build_cov_matrix", "build_cross_cov", "default_state",
    "gauss_corr", "log_latent_variance_density", "log_likelihood", "log_posterior", "log_prior",
    "pd_logdet", "pd_solve", "predict", "run_chain", "standardize",
]
