"""Synthetic data from the full generative model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..gpcore import GPParams
from ..logitn import softmax_reduced
from ..sampler.state import MixtureParams, MovementData

__all__ = ["SimScenario", "SimTruth", "simulate_dataset", "linear_time_design", "window_design"]


def linear_time_design(times) -> np.ndarray:
    """Intercept plus time."""
    times = np.asarray(times, dtype=float)
    return np.column_stack([np.ones_like(times), times])


def window_design(times, windows) -> np.ndarray:
    """One dummy column per ``(start, end)`` window; zero outside every window."""
    times = np.asarray(times, dtype=float)
    cols = [((times >= a) & (times <= b)).astype(float) for a, b in windows]
    return np.column_stack(cols) if cols else np.zeros((len(times), 0))


def _default_xi():
    return np.array([[0.0, 0.0], [3.0, 0.0], [0.0, -3.0]])


def _default_omega():
    return np.array([[[1.0, 0.0], [0.0, 3.0]],
                     [[1.0, 1.272], [1.272, 2.0]],
                     [[2.0, -0.5], [-0.5, 0.5]]])


def _default_sigma():
    return np.array([[5.0, -2.0, 0.0], [-2.0, 5.0, 3.0], [0.0, 3.0, 5.0]])


@dataclass
class SimScenario:
    """Truth and layout of a simulated trajectory.

    Defaults reproduce the three-behaviour benchmark: ``T`` increments at
    times ``t_i = i * span / T`` (``i = 1..T``) and design rows
    ``(1, t_i / span)``.  The covariate is rescaled to ``(0, 1]`` because
    with raw times the slopes of ``beta`` drive every row of ``pi`` onto the
    reference behaviour; ``time_covariate="raw"`` keeps ``(1, t_i)``.
    ``missing_fraction`` removes that share of increments at random.
    """

    T: int = 500
    xi: np.ndarray = field(default_factory=_default_xi)
    omega_cov: np.ndarray = field(default_factory=_default_omega)
    sigma_star: np.ndarray = field(default_factory=_default_sigma)
    decays: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.8, 1.5]))
    beta: np.ndarray = field(default_factory=lambda: np.array([0.0, -5.0, 3.0, -7.0]))
    span: float = 20.0
    design: str = "linear_time"
    time_covariate: str = "unit"
    missing_fraction: float = 0.0

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.omega_cov = np.asarray(self.omega_cov, dtype=float)
        self.sigma_star = np.asarray(self.sigma_star, dtype=float)
        self.decays = np.asarray(self.decays, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.T < 1:
            raise ValueError("T must be positive")
        if self.xi.ndim != 2 or len(self.xi) < 2:
            raise ValueError("need at least K = 2 behaviours")
        if not self.span > 0:
            raise ValueError("span must be positive")
        if not 0 <= self.missing_fraction < 1:
            raise ValueError("missing_fraction must lie in [0, 1)")
        if self.design not in ("linear_time", "intercept"):
            raise ValueError(f"unknown design {self.design!r}")
        if self.time_covariate not in ("unit", "raw"):
            raise ValueError(f"unknown time_covariate {self.time_covariate!r}")
        self.mixture  # validates Omega
        gp = self.gp_params  # validates Sigma*, decays and beta length
        if gp.K != len(self.xi):
            raise ValueError("mixture and GP disagree on K")
        if gp.p != self.n_covariates:
            raise ValueError(f"beta must have {self.n_covariates * (gp.K - 1)} entries")

    @property
    def K(self) -> int:
        return len(self.xi)

    @property
    def n_covariates(self) -> int:
        return 2 if self.design == "linear_time" else 1

    @property
    def mixture(self) -> MixtureParams:
        return MixtureParams(self.xi, self.omega_cov)

    @property
    def gp_params(self) -> GPParams:
        return GPParams(self.beta, self.sigma_star, self.decays)

    def times(self) -> np.ndarray:
        return np.arange(1, self.T + 1) * (self.span / self.T)

    def design_matrix(self, times=None) -> np.ndarray:
        times = self.times() if times is None else np.asarray(times, dtype=float)
        if self.design == "linear_time":
            scale = self.span if self.time_covariate == "unit" else 1.0
            return linear_time_design(times / scale)
        return np.ones((len(times), 1))


@dataclass
class SimTruth:
    times: np.ndarray
    X: np.ndarray
    eta: np.ndarray
    omega_field: np.ndarray
    pi: np.ndarray
    z: np.ndarray
    y_full: np.ndarray
    observed: np.ndarray
    scenario: SimScenario

    def to_dict(self) -> dict:
        sc = self.scenario
        return {
            "K": sc.K, "T": sc.T, "span": sc.span, "design": sc.design,
            "time_covariate": sc.time_covariate,
            "xi": sc.xi.tolist(), "omega_cov": sc.omega_cov.tolist(),
            "sigma_star": sc.sigma_star.tolist(), "decays": sc.decays.tolist(),
            "beta": sc.beta.tolist(), "missing_fraction": sc.missing_fraction,
            "z": (self.z + 1).tolist(), "pi": self.pi.tolist(),
            "omega_field": self.omega_field.tolist(),
        }


def _exp_gp_paths(times, decays, rng) -> np.ndarray:
    """Unit-variance exponential-correlation GP paths, exactly, via the AR(1) recursion."""
    T, K = len(times), len(decays)
    out = np.empty((T, K))
    eps = rng.standard_normal((T, K))
    out[0] = eps[0]
    if T > 1:
        rho = np.exp(-np.diff(times)[:, None] * decays[None])
        sd = np.sqrt(1.0 - rho ** 2)
        for t in range(1, T):
            out[t] = rho[t - 1] * out[t - 1] + sd[t - 1] * eps[t]
    return out


def simulate_dataset(scenario: SimScenario, rng: np.random.Generator) -> tuple[MovementData, SimTruth]:
    """Draw one trajectory of increments together with every latent quantity.

    Independent GPs ``eta_k`` are mixed by the reduced loading to form the
    log-ratio field, which is pushed through the softmax to ``pi_t``; then
    ``z_t ~ Cat(pi_t)`` and ``y_t ~ N_2(xi_{z_t}, Omega_{z_t})``.
    """
    sc = scenario
    times = sc.times()
    X = sc.design_matrix(times)
    gp = sc.gp_params
    eta = _exp_gp_paths(times, gp.decays, rng)
    omega = gp.mean_field(X) + eta @ gp.loading.T
    pi = softmax_reduced(omega)
    cum = np.cumsum(pi, axis=1)
    z = np.minimum((cum < rng.random(sc.T)[:, None]).sum(axis=1), sc.K - 1)
    chol = np.linalg.cholesky(sc.omega_cov)
    y = sc.xi[z] + np.einsum("tij,tj->ti", chol[z], rng.standard_normal((sc.T, 2)))
    observed = np.ones(sc.T, dtype=bool)
    if sc.missing_fraction > 0:
        n_miss = int(round(sc.missing_fraction * sc.T))
        observed[rng.choice(sc.T, n_miss, replace=False)] = False
    y_obs = np.where(observed[:, None], y, np.nan)
    data = MovementData(y_obs, times)
    truth = SimTruth(times, X, eta, omega, pi, z, y, observed, sc)
    return data, truth
