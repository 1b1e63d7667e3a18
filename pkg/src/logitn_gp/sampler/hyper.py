"""Joint Metropolis update of regression, decay and coregionalization parameters.

All GP hyperparameters move together in an unconstrained vector

    theta = (beta, logit-scaled decays, Bartlett coordinates of Sigma*)

For ``Sigma* ~ IW(nu, Psi)`` with ``Psi = S S'`` we write
``Sigma*^{-1} = S^{-T} B B' S^{-1}`` where ``B`` is lower triangular; under the
prior the off-diagonal entries of ``B`` are standard normal and
``B_ii^2 ~ chi^2_{nu - i}``, so ``theta`` holds the off-diagonals as they are
and ``log B_ii``.  The proposal is a Gaussian random walk whose covariance
and global scale are adapted by Robbins-Monro recursions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln, log_expit

from ..gpcore import FactorError, GPParams, NNGPFactor, build_nngp_factor, nngp_logdensity
from .state import Priors

__all__ = ["ThetaMap", "AdaptiveProposal", "update_gp_hyper", "HyperResult"]

log = logging.getLogger(__name__)


class ThetaMap:
    """Bijection between :class:`GPParams` and the real vector ``theta``."""

    def __init__(self, K: int, p: int, priors: Priors):
        self.K, self.p = K, p
        self.priors = priors
        self.n_beta = p * (K - 1)
        self.df = priors.sigma_star_df(K)
        self.S = np.linalg.cholesky(priors.sigma_star_scale(K))
        self.lo, self.hi = priors.decay_lower, priors.decay_upper
        self._tril = np.tril_indices(K, -1)
        # chi-square degrees of freedom of each Bartlett diagonal
        self._chi_df = self.df - np.arange(K)

    @property
    def dim(self) -> int:
        return self.n_beta + self.K + self.K * (self.K + 1) // 2

    def _split(self, theta):
        b = self.n_beta
        K = self.K
        return theta[:b], theta[b:b + K], theta[b + K:b + 2 * K], theta[b + 2 * K:]

    def pack(self, params: GPParams) -> np.ndarray:
        frac = (params.decays - self.lo) / (self.hi - self.lo)
        if np.any(frac <= 0) or np.any(frac >= 1):
            raise ValueError("decays outside the prior support")
        v = np.log(frac) - np.log1p(-frac)
        inner = self.S.T @ np.linalg.inv(params.sigma_star) @ self.S
        B = np.linalg.cholesky(0.5 * (inner + inner.T))
        return np.concatenate([params.beta, v, np.log(np.diag(B)), B[self._tril]])

    def sigma_star(self, theta) -> np.ndarray:
        _, _, logdiag, off = self._split(np.asarray(theta, dtype=float))
        B = np.zeros((self.K, self.K))
        B[np.diag_indices(self.K)] = np.exp(logdiag)
        B[self._tril] = off
        # Sigma* = S B^{-T} B^{-1} S'
        C = self.S @ np.linalg.inv(B).T
        out = C @ C.T
        return 0.5 * (out + out.T)

    def unpack(self, theta) -> GPParams:
        theta = np.asarray(theta, dtype=float)
        beta, v, _, _ = self._split(theta)
        decays = self.lo + (self.hi - self.lo) * expit(v)
        return GPParams(beta.copy(), self.sigma_star(theta), decays)

    def log_prior(self, theta) -> float:
        """Prior log-density of ``theta`` including all change-of-variable terms."""
        beta, v, logdiag, off = self._split(np.asarray(theta, dtype=float))
        pr = self.priors
        lp = -0.5 * np.sum((beta - pr.beta_mean) ** 2) / pr.beta_var
        lp -= 0.5 * beta.size * np.log(2 * np.pi * pr.beta_var)
        # uniform decay pushed through the scaled logit
        lp += float(np.sum(log_expit(v) + log_expit(-v)))
        # standard normal off-diagonals
        lp += float(-0.5 * np.sum(off ** 2) - 0.5 * off.size * np.log(2 * np.pi))
        # u = log b with b^2 ~ chi^2_k: density exp(k u - e^{2u}/2) / (2^{k/2-1} Gamma(k/2))
        k = self._chi_df
        lp += float(np.sum(k * logdiag - 0.5 * np.exp(2 * logdiag)
                           - (k / 2 - 1) * np.log(2.0) - gammaln(k / 2)))
        return lp


@dataclass
class AdaptiveProposal:
    """Gaussian random walk with Robbins-Monro adapted mean, covariance and scale.

    After each step with acceptance probability ``alpha`` and step size
    ``g = n^{-decay}``::

        log_scale += g * (alpha - target)
        mean      += g * (theta - mean)
        cov       += g * ((theta - mean)(theta - mean)' - cov)

    The covariance recursion starts after ``cov_start`` steps.
    """

    dim: int
    target: float = 0.234
    decay: float = 0.6
    init_sd: float = 0.1
    cov_start: int = 100
    n: int = 0
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    log_scale: float = field(default=float("nan"))

    def __post_init__(self):
        if self.cov is None:
            self.cov = self.init_sd ** 2 * np.eye(self.dim)
        if np.isnan(self.log_scale):
            self.log_scale = float(np.log(2.38 ** 2 / self.dim))

    def propose(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        L = np.linalg.cholesky(np.exp(self.log_scale) * self.cov + 1e-10 * np.eye(self.dim))
        return theta + L @ rng.standard_normal(self.dim)

    def adapt(self, theta: np.ndarray, alpha: float) -> None:
        self.n += 1
        if self.mean is None:
            self.mean = np.array(theta, dtype=float)
        g = self.n ** (-self.decay)
        self.log_scale += g * (alpha - self.target)
        diff = theta - self.mean
        self.mean = self.mean + g * diff
        if self.n > self.cov_start:
            self.cov = self.cov + g * (np.outer(diff, diff) - self.cov)
            self.cov = 0.5 * (self.cov + self.cov.T)


@dataclass
class HyperResult:
    params: GPParams
    factor: NNGPFactor
    theta: np.ndarray
    accepted: bool
    alpha: float


def update_gp_hyper(omega_field, design_X, theta_map: ThetaMap, theta: np.ndarray,
                    factor: NNGPFactor, adapt: AdaptiveProposal, times, m: int,
                    rng: np.random.Generator, proposal: np.ndarray | None = None) -> HyperResult:
    """One adaptive Metropolis step on ``theta`` targeting ``p(theta | omega)``.

    The target is the NNGP density of the current field times the prior of
    ``theta``.  A proposal whose factor cannot be built is rejected.
    ``proposal`` overrides the random-walk draw (used by tests).
    """
    current = theta_map.unpack(theta)
    X = np.asarray(design_X, dtype=float)
    log_cur = nngp_logdensity(omega_field, current.mean_field(X), factor) + theta_map.log_prior(theta)
    prop = adapt.propose(theta, rng) if proposal is None else np.asarray(proposal, dtype=float)
    u = rng.random()
    try:
        with np.errstate(over="raise"):
            new = theta_map.unpack(prop)
        new_factor = build_nngp_factor(times, new, m)
        log_new = nngp_logdensity(omega_field, new.mean_field(X), new_factor) + theta_map.log_prior(prop)
    except (FactorError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("hyperparameter proposal rejected: %s", exc)
        log_new = -np.inf
    diff = log_new - log_cur
    alpha = float(np.exp(min(0.0, diff))) if np.isfinite(diff) else 0.0
    accepted = bool(u < alpha) or (np.isfinite(diff) and diff >= 0)
    if accepted:
        out = HyperResult(new, new_factor, prop, True, alpha)
    else:
        out = HyperResult(current, factor, theta, False, alpha)
    adapt.adapt(out.theta, alpha)
    return out
