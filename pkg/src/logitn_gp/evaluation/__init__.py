"""Model choice, simulation and posterior summaries."""

from .icl import ICLReport, complete_loglik, icl, n_free_params, select_model
from .simulate import SimScenario, SimTruth, linear_time_design, simulate_dataset, window_design
from .summaries import (
    LogratioReport,
    PredictiveDensities,
    ProbSummary,
    logratio_report,
    permute_store,
    predictive_densities,
    probability_timeseries,
    projected_normal_logpdf,
    relabel,
    step_length_kde,
)

__all__ = [
    "ICLReport",
    "LogratioReport",
    "PredictiveDensities",
    "ProbSummary",
    "SimScenario",
    "SimTruth",
    "complete_loglik",
    "icl",
    "linear_time_design",
    "logratio_report",
    "n_free_params",
    "permute_store",
    "predictive_densities",
    "probability_timeseries",
    "projected_normal_logpdf",
    "relabel",
    "select_model",
    "simulate_dataset",
    "step_length_kde",
    "window_design",
]
