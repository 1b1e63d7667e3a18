"""Logistic-normal maps between Gaussian fields and probability vectors.

Probabilities are computed in log space with max-subtraction so that large
excursions of the latent field cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gpcore import GPParams, gamma_cross_cov

__all__ = [
    "ProbField",
    "softmax_full",
    "softmax_reduced",
    "gamma_to_omega",
    "log_softmax_reduced",
    "logratio_cov",
    "logratio_corr_curve",
    "independence_structure",
]

_FLUSH = 1e-300


@dataclass(frozen=True)
class ProbField:
    """``(T, K)`` matrix of probability vectors, one row per time point."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 2:
            raise ValueError("pi must be a (T, K) matrix")
        if np.any(pi < 0) or np.abs(pi.sum(axis=1) - 1.0).max(initial=0.0) > 1e-12:
            raise ValueError("rows of pi must be nonnegative and sum to one")
        object.__setattr__(self, "pi", pi)

    @classmethod
    def from_omega(cls, omega) -> "ProbField":
        return cls(softmax_reduced(omega))

    @property
    def T(self) -> int:
        return self.pi.shape[0]

    @property
    def K(self) -> int:
        return self.pi.shape[1]


def _check_finite(x: np.ndarray) -> None:
    if np.isnan(x).any():
        raise ValueError("NaN in latent field")


def _normalize(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(shifted)
    p[p < _FLUSH] = 0.0
    return p / p.sum(axis=-1, keepdims=True)


def softmax_full(gamma) -> np.ndarray:
    """``exp(gamma_k) / sum_j exp(gamma_j)`` along the last axis."""
    gamma = np.asarray(gamma, dtype=float)
    _check_finite(gamma)
    return _normalize(gamma)


def gamma_to_omega(gamma) -> np.ndarray:
    """Differences to the last category: ``omega_k = gamma_k - gamma_K``."""
    gamma = np.asarray(gamma, dtype=float)
    return gamma[..., :-1] - gamma[..., -1:]


def _pad_zero(omega: np.ndarray) -> np.ndarray:
    return np.concatenate([omega, np.zeros(omega.shape[:-1] + (1,))], axis=-1)


def softmax_reduced(omega) -> np.ndarray:
    """Probabilities from ``K-1`` log-ratios against a zero reference element."""
    omega = np.asarray(omega, dtype=float)
    _check_finite(omega)
    return _normalize(_pad_zero(omega))


def log_softmax_reduced(omega) -> np.ndarray:
    """``log pi`` for reduced logits, exact in the tails."""
    full = _pad_zero(np.asarray(omega, dtype=float))
    mx = full.max(axis=-1, keepdims=True)
    return full - mx - np.log(np.exp(full - mx).sum(axis=-1, keepdims=True))


def logratio_cov(i: int, j: int, k: int, l: int, dt, params: GPParams):
    """Covariance of ``log(pi_i/pi_k)`` at ``t`` with ``log(pi_j/pi_l)`` at ``t + dt``.

    Indices are 1-based category labels.  The four-term expansion runs on the
    full field, so the reference element enters like any other category.
    """
    K = params.K
    for idx in (i, j, k, l):
        if not 1 <= idx <= K:
            raise IndexError(f"category index {idx} outside 1..{K}")
    if i == k or j == l:
        return np.zeros(np.shape(dt)) if np.ndim(dt) else 0.0
    G = gamma_cross_cov(dt, params)
    i, j, k, l = i - 1, j - 1, k - 1, l - 1
    out = G[..., i, j] + G[..., k, l] - G[..., i, l] - G[..., k, j]
    return float(out) if np.ndim(out) == 0 else out


def logratio_corr_curve(i: int, j: int, k: int, l: int, lags, params: GPParams) -> np.ndarray:
    """``tau(dt) / tau(0)`` over ``lags``."""
    tau0 = logratio_cov(i, j, k, l, 0.0, params)
    # relative to the lag-0 scale of the log-ratios involved
    scale = np.sqrt(abs(logratio_cov(i, i, k, k, 0.0, params) * logratio_cov(j, j, l, l, 0.0, params)))
    if not abs(tau0) > 1e-12 * scale:
        raise ValueError("log-ratio covariance at lag 0 is zero")
    return np.asarray(logratio_cov(i, j, k, l, np.asarray(lags, dtype=float), params)) / tau0


def independence_structure(a) -> np.ndarray:
    """``(K-1)x(K-1)`` matrix with diagonal ``a_k + a_K`` and off-diagonal ``a_K``."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or len(a) < 2:
        raise ValueError("need at least two entries")
    if np.any(a <= 0):
        raise ValueError("entries must be positive")
    return np.diag(a[:-1]) + a[-1]
