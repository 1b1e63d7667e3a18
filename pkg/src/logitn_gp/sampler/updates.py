"""Gibbs and Metropolis updates for labels, mixture, latent field and gaps."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, solve_banded
from scipy.special import logsumexp

from ..gpcore import GPParams, NNGPFactor
from ..logitn import log_softmax_reduced
from ..pg import pg_sample
from ..trajectory import decompose_coords
from .state import LatentState, MixtureParams, MovementData, Priors

__all__ = [
    "mixture_logpdf",
    "sample_invwishart",
    "update_labels",
    "update_mixture",
    "update_omega_field",
    "MissingCoordSampler",
]

LOG_2PI = np.log(2.0 * np.pi)


def mixture_logpdf(y: np.ndarray, mixture: MixtureParams) -> np.ndarray:
    """``log N_2(y_t | xi_k, Omega_k)`` as a ``(T, K)`` array; NaN rows give 0."""
    S = mixture.omega_cov
    det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] * S[:, 1, 0]
    d = y[:, None, :] - mixture.xi[None]
    quad = (S[:, 1, 1] * d[..., 0] ** 2 - 2.0 * S[:, 0, 1] * d[..., 0] * d[..., 1]
            + S[:, 0, 0] * d[..., 1] ** 2) / det
    out = -LOG_2PI - 0.5 * np.log(det) - 0.5 * quad
    return np.where(np.isnan(out), 0.0, out)


def sample_invwishart(df, scale, rng: np.random.Generator) -> np.ndarray:
    """Batched inverse-Wishart draws via the Bartlett factor of the inverse.

    ``df`` has shape ``(n,)`` and ``scale`` ``(n, d, d)``; returns ``(n, d, d)``.
    """
    scale = np.asarray(scale, dtype=float)
    n, d, _ = scale.shape
    df = np.broadcast_to(np.asarray(df, dtype=float), (n,))
    # Sigma^{-1} ~ Wishart(df, scale^{-1}) = M A A' M', M = L^{-T}, scale = L L'
    L = np.linalg.cholesky(scale)
    A = np.zeros((n, d, d))
    rows, cols = np.tril_indices(d, -1)
    A[:, rows, cols] = rng.standard_normal((n, len(rows)))
    A[:, np.arange(d), np.arange(d)] = np.sqrt(rng.chisquare(df[:, None] - np.arange(d)))
    # Sigma = L A^{-T} A^{-1} L'
    B = L @ np.linalg.inv(np.swapaxes(A, -1, -2))
    out = B @ np.swapaxes(B, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def update_labels(y, prob_field, mixture: MixtureParams, rng: np.random.Generator,
                  loglik: np.ndarray | None = None) -> np.ndarray:
    """Draw ``z_t`` with weights ``pi_tk N_2(y_t | xi_k, Omega_k)``, independently over t.

    Rows of ``y`` that are NaN contribute no likelihood, so their label is
    drawn from ``pi_t`` alone.  ``loglik`` may pass a precomputed
    :func:`mixture_logpdf`.
    """
    pi = np.asarray(prob_field, dtype=float)
    if loglik is None:
        loglik = mixture_logpdf(np.asarray(y, dtype=float), mixture)
    with np.errstate(divide="ignore"):
        logw = np.log(pi) + loglik
    mx = logw.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(mx)):
        bad = int(np.flatnonzero(~np.isfinite(mx[:, 0]))[0])
        raise FloatingPointError(f"all label weights vanish at t={bad}")
    w = np.exp(logw - mx)
    cum = np.cumsum(w, axis=1)
    u = rng.random(len(w)) * cum[:, -1]
    z = (cum < u[:, None]).sum(axis=1)
    return np.minimum(z, pi.shape[1] - 1)


def update_mixture(y, z, priors: Priors, rng: np.random.Generator,
                   current: MixtureParams | None = None, K: int | None = None) -> MixtureParams:
    """One Gibbs pass over ``(xi_k, Omega_k)`` for every component.

    The prior is ``xi_k ~ N(xi_mean, xi_cov)`` independent of
    ``Omega_k ~ IW(omega_iw_df, omega_iw_scale)``, so the pass draws
    ``xi_k | Omega_k`` and then ``Omega_k | xi_k``.  Components without data
    are drawn from the prior.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z)
    if current is None:
        if K is None:
            raise ValueError("need K when no current state is given")
        current = MixtureParams(np.tile(priors.xi_mean, (K, 1)), np.tile(priors.omega_iw_scale, (K, 1, 1)))
    K = current.K
    ok = np.isfinite(y).all(axis=1) & (z >= 0)
    yy, zz = y[ok], z[ok]
    onehot = zz[:, None] == np.arange(K)[None]
    counts = onehot.sum(axis=0).astype(float)
    sums = onehot.T.astype(float) @ yy

    prior_prec = np.linalg.inv(priors.xi_cov)
    omega_inv = np.linalg.inv(current.omega_cov)
    prec = prior_prec[None] + counts[:, None, None] * omega_inv
    lin = (prior_prec @ priors.xi_mean)[None] + np.einsum("kij,kj->ki", omega_inv, sums)
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    mean = np.einsum("kij,kj->ki", cov, lin)
    xi = mean + np.einsum("kij,kj->ki", np.linalg.cholesky(cov), rng.standard_normal((K, 2)))

    d = yy - xi[zz]
    scatter = np.einsum("nk,ni,nj->kij", onehot.astype(float), d, d)
    omega_cov = sample_invwishart(priors.omega_iw_df + counts, priors.omega_iw_scale[None] + scatter, rng)
    return MixtureParams(xi, omega_cov)


def _band_upper(band_kk: np.ndarray) -> np.ndarray:
    """Lower band ``B[t, l] = P[t, t-l]`` to LAPACK upper storage."""
    return band_kk.T[::-1].copy()


def _band_matvec(band_kk: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = band_kk[:, 0] * v
    for lag in range(1, band_kk.shape[1]):
        if lag >= len(v):
            break
        out[lag:] += band_kk[lag:, lag] * v[:-lag]
        out[:-lag] += band_kk[lag:, lag] * v[lag:]
    return out


def update_omega_field(z, state: LatentState, gp_params: GPParams, factor: NNGPFactor,
                       design_X, rng: np.random.Generator, order=None) -> tuple[np.ndarray, np.ndarray]:
    """Polya-Gamma augmented Gibbs update of the log-ratio field.

    For each slot ``k`` (in random order) the one-vs-rest logit
    ``psi_tk = omega_tk - c_tk``, ``c_tk = log sum_{j != k} exp(omega_tj)``
    (reference entry fixed at 0) gets ``pg_tk ~ PG(1, psi_tk)``.  Given the
    auxiliaries, ``omega_{., k}`` is Gaussian with precision
    ``Q_kk + diag(pg_k)`` where ``Q`` is the NNGP precision, and is drawn
    jointly over time through a banded Cholesky factor.  Labels equal to -1
    carry no likelihood.

    Returns the new field and auxiliaries.
    """
    z = np.asarray(z)
    omega = np.array(state.omega_field, dtype=float, copy=True)
    pg_aux = np.array(state.pg_aux, dtype=float, copy=True)
    T, q = omega.shape
    mean = gp_params.mean_field(design_X)
    band = factor.precision_band
    active = (z >= 0).astype(float)
    if order is None:
        order = rng.permutation(q)
    m_eff = min(factor.m, T - 1)
    for k in order:
        full = np.concatenate([omega, np.zeros((T, 1))], axis=1)
        others = np.delete(full, k, axis=1)
        offset = logsumexp(others, axis=1)
        if not np.all(np.isfinite(offset)):
            raise FloatingPointError("non-finite multinomial offset")
        pg = pg_sample(1, omega[:, k] - offset, rng)
        pg_aux[:, k] = pg
        kappa = (z == k).astype(float) - 0.5

        e = omega - mean
        band_kk = band[:, : m_eff + 1, k, k]
        cross = factor.precision_matvec(e)[:, k] - _band_matvec(band_kk, e[:, k])
        lin = -cross + active * (kappa - pg * (mean[:, k] - offset))
        post = band_kk.copy()
        post[:, 0] += active * pg
        U = cholesky_banded(_band_upper(post), lower=False)
        mu = cho_solve_banded((U, False), lin)
        draw = mu + solve_banded((0, m_eff), U, rng.standard_normal(T))
        omega[:, k] = mean[:, k] + draw
    if not np.all(np.isfinite(omega)):
        raise FloatingPointError("non-finite latent field")
    return omega, pg_aux


class MissingCoordSampler:
    """Adaptive random-walk Metropolis for unobserved coordinates.

    A coordinate ``s_j`` enters the increments ``y_{j-2}, y_{j-1}, y_j``
    through both displacements and headings.  Coordinates three or more
    slots apart touch disjoint increments, so the update runs in three
    vectorized passes over ``j mod 3``.  The target uses the mixture density
    ``sum_k pi_tk N(y_t | xi_k, Omega_k)`` with labels integrated out; labels
    are redrawn right after.
    """

    def __init__(self, data: MovementData, init_scale: float | None = None,
                 target: float = 0.234, decay: float = 0.6):
        if data.coords is None:
            raise ValueError("imputation needs coordinates")
        self.missing = np.flatnonzero(~data.coord_observed)
        self.target = target
        self.decay = decay
        self.n_updates = 0
        self.accepted = np.zeros(len(self.missing))
        coords = data.coords.copy()
        obs = np.flatnonzero(data.coord_observed)
        if self.missing.size:
            for dim in range(2):
                coords[self.missing, dim] = np.interp(self.missing, obs, coords[obs, dim])
        self.coords = coords
        if init_scale is None:
            steps = np.hypot(*np.diff(coords[obs], axis=0).T) if len(obs) > 1 else np.ones(1)
            init_scale = 0.5 * float(np.median(steps)) if steps.size else 1.0
            if not init_scale > 0:
                init_scale = 1.0
        with np.errstate(divide="ignore"):
            self.log_scale = np.full(len(self.missing), np.log(init_scale))

    def increments(self) -> np.ndarray:
        return decompose_coords(self.coords)[0]

    def step(self, prob_field: np.ndarray, mixture: MixtureParams, rng: np.random.Generator) -> np.ndarray:
        """One sweep over every missing coordinate; returns the updated ``y``."""
        if self.missing.size == 0:
            return self.increments()
        self.n_updates += 1
        gamma = self.n_updates ** (-self.decay)
        with np.errstate(divide="ignore"):
            log_pi = np.log(prob_field)
        n_y = len(self.coords) - 2

        def point_loglik(y):
            return logsumexp(log_pi + mixture_logpdf(y, mixture), axis=1)

        cur = point_loglik(self.increments())
        for r in range(3):
            sel = np.flatnonzero(self.missing % 3 == r)
            if sel.size == 0:
                continue
            j = self.missing[sel]
            prop = self.coords.copy()
            prop[j] += np.exp(self.log_scale[sel])[:, None] * rng.standard_normal((sel.size, 2))
            new = point_loglik(decompose_coords(prop)[0])
            diff = new - cur
            # each j collects the increments j-2, j-1, j
            ratio = np.zeros(sel.size)
            for off in (-2, -1, 0):
                idx = j + off
                ok = (idx >= 0) & (idx < n_y)
                ratio[ok] += diff[idx[ok]]
            alpha = np.exp(np.minimum(ratio, 0.0))
            acc = rng.random(sel.size) < alpha
            self.coords[j[acc]] = prop[j[acc]]
            for off in (-2, -1, 0):
                idx = j[acc] + off
                idx = idx[(idx >= 0) & (idx < n_y)]
                cur[idx] = new[idx]
            self.accepted[sel] += acc
            self.log_scale[sel] += gamma * (alpha - self.target)
        return self.increments()
