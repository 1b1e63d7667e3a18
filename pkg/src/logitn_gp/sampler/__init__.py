"""MCMC engine for the logistic-normal GP mixture."""

from .chain import ChainState, SampleStore, SamplerError, gibbs_sweep, run_chain
from .hyper import AdaptiveProposal, ThetaMap, update_gp_hyper
from .state import ChainConfig, LatentState, MixtureParams, MovementData, Priors
from .updates import (
    MissingCoordSampler,
    mixture_logpdf,
    sample_invwishart,
    update_labels,
    update_mixture,
    update_omega_field,
)

__all__ = [
    "AdaptiveProposal",
    "ChainConfig",
    "ChainState",
    "LatentState",
    "MissingCoordSampler",
    "MixtureParams",
    "MovementData",
    "Priors",
    "SampleStore",
    "SamplerError",
    "ThetaMap",
    "gibbs_sweep",
    "mixture_logpdf",
    "run_chain",
    "sample_invwishart",
    "update_gp_hyper",
    "update_labels",
    "update_mixture",
    "update_omega_field",
]
