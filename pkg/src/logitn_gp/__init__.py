"""Logistic-normal Gaussian-process mixtures for animal movement tracks.

Behaviour probabilities evolve over time as a softmax of a multivariate
Gaussian process built by coregionalization of independent exponential
GPs; rotated coordinate increments follow a mixture of bivariate normals.
Inference is by MCMC with a nearest-neighbour GP, Polya-Gamma augmentation
and adaptive Metropolis.
"""

__version__ = "0.1.0"

from .gpcore import FactorError, GPParams, NNGPFactor, build_nngp_factor, nngp_logdensity
from .logitn import ProbField, logratio_corr_curve, logratio_cov, softmax_full, softmax_reduced
from .pg import pg_sample
from .sampler import ChainConfig, MixtureParams, MovementData, Priors, SampleStore, run_chain
from .trajectory import decompose, parse_track, reconstruct, regularize

__all__ = [
    "ChainConfig",
    "FactorError",
    "GPParams",
    "MixtureParams",
    "MovementData",
    "NNGPFactor",
    "Priors",
    "ProbField",
    "SampleStore",
    "build_nngp_factor",
    "decompose",
    "logratio_corr_curve",
    "logratio_cov",
    "nngp_logdensity",
    "parse_track",
    "pg_sample",
    "reconstruct",
    "regularize",
    "run_chain",
    "softmax_full",
    "softmax_reduced",
]
