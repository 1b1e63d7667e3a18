"""Coregionalized Gaussian process for the reduced log-ratio field.

The full ``K``-variate field is ``gamma_t = mean_t + A* eta_t`` with ``K``
independent unit-variance latent processes ``eta_d`` (exponential correlation,
decay ``phi_d``) and ``A*`` the symmetric square root of ``Sigma*``.  Only the
differences ``omega_t = gamma_{t,1:K-1} - gamma_{t,K}`` are identified, and
their loading matrix is ``A = A*[:K-1] - A*[K]``.

The NNGP approximation replaces ``p(omega)`` by ``prod_t p(omega_t | omega_N(t))``
where ``N(t)`` holds at most ``m`` temporal predecessors, conditioning on whole
``(K-1)``-blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

__all__ = [
    "FactorError",
    "GPParams",
    "NNGPFactor",
    "expo_corr",
    "CORRELATIONS",
    "symmetric_sqrt",
    "reduce_A",
    "omega_cross_cov",
    "gamma_cross_cov",
    "build_neighbor_sets",
    "build_nngp_factor",
    "nngp_logdensity",
    "nngp_sample_prior",
    "dense_omega_cov",
]

LOG_2PI = np.log(2.0 * np.pi)


class FactorError(np.linalg.LinAlgError):
    """The NNGP conditioning matrices could not be factorized."""


def expo_corr(dt, phi):
    """Exponential correlation ``exp(-phi * dt)``; broadcasts over arrays."""
    phi = np.asarray(phi, dtype=float)
    dt = np.asarray(dt, dtype=float)
    if np.any(phi <= 0):
        raise ValueError("decay must be positive")
    if np.any(dt < 0):
        raise ValueError("time lag must be nonnegative")
    out = np.exp(-phi * dt)
    return float(out) if out.ndim == 0 else out


# name -> correlation(dt, phi); only the exponential family ships
CORRELATIONS = {"exponential": expo_corr}


def symmetric_sqrt(sigma_star) -> np.ndarray:
    """Unique symmetric PSD square root ``Delta Xi Delta'`` of an SPD matrix.

    Eigenvalues below ``1e-12 * trace`` are clamped; inputs with clearly
    negative eigenvalues are rejected.
    """
    s = np.asarray(sigma_star, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("sigma_star must be a square matrix")
    scale = max(np.abs(s).max(), np.finfo(float).tiny)
    if np.abs(s - s.T).max() > 1e-10 * scale:
        raise ValueError("sigma_star must be symmetric")
    s = 0.5 * (s + s.T)
    w, v = np.linalg.eigh(s)
    if w[0] < -1e-10 * max(abs(w[-1]), np.finfo(float).tiny) or w[-1] <= 0:
        raise ValueError("sigma_star is not positive definite")
    w = np.maximum(w, 1e-12 * np.trace(s))
    a = (v * np.sqrt(w)) @ v.T
    return 0.5 * (a + a.T)


def reduce_A(a_star) -> np.ndarray:
    """Loading matrix of ``omega``: each of the first ``K-1`` rows minus row ``K``."""
    a_star = np.asarray(a_star, dtype=float)
    return a_star[:-1] - a_star[-1]


@dataclass(frozen=True)
class GPParams:
    """Hyperparameters of the coregionalized field.

    Attributes
    ----------
    beta : ndarray, shape (p*(K-1),)
        Regression coefficients, stored category-major: entries
        ``[k*p:(k+1)*p]`` act on ``omega_{., k}``.
    sigma_star : ndarray, shape (K, K)
        Covariance of the (unidentified) full field at lag zero.
    decays : ndarray, shape (K,)
        Exponential decay of each latent process.
    """

    beta: np.ndarray
    sigma_star: np.ndarray
    decays: np.ndarray

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        sigma = np.asarray(self.sigma_star, dtype=float)
        decays = np.atleast_1d(np.asarray(self.decays, dtype=float))
        K = len(decays)
        if K < 2:
            raise ValueError("need K >= 2 components")
        if sigma.shape != (K, K):
            raise ValueError(f"sigma_star must be {K}x{K}")
        if beta.size % (K - 1):
            raise ValueError("len(beta) must be a multiple of K-1")
        if np.any(decays <= 0) or not np.all(np.isfinite(decays)):
            raise ValueError("decays must be positive")
        if np.abs(sigma - sigma.T).max() > 1e-10 * max(np.abs(sigma).max(), 1e-300):
            raise ValueError("sigma_star must be symmetric")
        w = np.linalg.eigvalsh(0.5 * (sigma + sigma.T))
        if not w[0] > 1e-12 * w[-1] or not w[-1] > 0:
            raise ValueError("sigma_star must be positive definite")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma_star", 0.5 * (sigma + sigma.T))
        object.__setattr__(self, "decays", decays)

    @property
    def K(self) -> int:
        return len(self.decays)

    @property
    def p(self) -> int:
        return self.beta.size // (self.K - 1)

    @property
    def beta_matrix(self) -> np.ndarray:
        """``(K-1, p)`` view of ``beta``."""
        return self.beta.reshape(self.K - 1, self.p)

    @cached_property
    def a_star(self) -> np.ndarray:
        return symmetric_sqrt(self.sigma_star)

    @cached_property
    def loading(self) -> np.ndarray:
        return reduce_A(self.a_star)

    def mean_field(self, X) -> np.ndarray:
        """``(T, K-1)`` mean of ``omega`` for a ``(T, p)`` design."""
        X = np.asarray(X, dtype=float)
        return X @ self.beta_matrix.T


def omega_cross_cov(dt, params: GPParams) -> np.ndarray:
    """``Cov(omega_t, omega_{t+dt}) = A diag(C_d(dt)) A'``; vectorized over ``dt``."""
    dt = np.asarray(dt, dtype=float)
    A = params.loading
    corr = expo_corr(dt[..., None], params.decays)
    return np.einsum("ik,...k,jk->...ij", A, corr, A)


def gamma_cross_cov(dt, params: GPParams) -> np.ndarray:
    """Cross-covariance of the full ``K``-variate field at lag ``dt``."""
    dt = np.asarray(dt, dtype=float)
    B = params.a_star
    corr = expo_corr(dt[..., None], params.decays)
    return np.einsum("ik,...k,jk->...ij", B, corr, B)


def build_neighbor_sets(T: int, m: int) -> list[np.ndarray]:
    """Temporal neighbor sets ``N(t) = (t-1, ..., max(0, t-m))`` (0-based)."""
    if T < 1 or m < 1:
        raise ValueError("need T >= 1 and m >= 1")
    return [np.arange(t - 1, max(0, t - m) - 1, -1) for t in range(T)]


def _neighbor_arrays(T: int, m: int):
    offsets = np.arange(1, m + 1)
    idx = np.arange(T)[:, None] - offsets[None, :]
    mask = idx >= 0
    return np.where(mask, idx, 0), mask


def _chol_with_jitter(mats: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        pass
    scale = np.trace(mats, axis1=-2, axis2=-1).mean() / mats.shape[-1]
    eye = np.eye(mats.shape[-1])
    for jitter in (1e-10, 1e-8):
        try:
            return np.linalg.cholesky(mats + jitter * scale * eye)
        except np.linalg.LinAlgError:
            continue
    raise FactorError("conditioning matrix is numerically singular "
                      "(near-duplicate times or degenerate sigma_star)")


@dataclass(frozen=True, eq=False)
class NNGPFactor:
    """Sparse conditional representation of the NNGP density of ``omega``.

    ``weights[t]`` maps the stacked neighbor blocks ``omega_N(t)`` (nearest
    first, padded with zeros up to ``m`` blocks) to the conditional mean of
    ``omega_t``; ``cond_cov[t]`` is the conditional covariance.
    """

    times: np.ndarray
    m: int
    neighbors: np.ndarray
    neighbor_mask: np.ndarray
    weights: np.ndarray
    cond_cov: np.ndarray
    cond_chol: np.ndarray
    log_det: float
    pattern_id: np.ndarray | None = None

    @property
    def T(self) -> int:
        return len(self.times)

    @property
    def q(self) -> int:
        return self.cond_cov.shape[-1]

    @property
    def neighbor_sets(self) -> list[np.ndarray]:
        return [self.neighbors[t][self.neighbor_mask[t]] for t in range(self.T)]

    @property
    def cond_weights(self) -> list[np.ndarray]:
        q = self.q
        return [self.weights[t][:, : q * int(self.neighbor_mask[t].sum())] for t in range(self.T)]

    @cached_property
    def cond_prec(self) -> np.ndarray:
        eye = np.broadcast_to(np.eye(self.q), self.cond_cov.shape)
        linv = np.linalg.solve(self.cond_chol, eye)
        return np.einsum("tki,tkj->tij", linv, linv)

    def residuals(self, e: np.ndarray) -> np.ndarray:
        """``e_t - W_t e_N(t)`` for a centred field ``e`` of shape ``(T, q)``."""
        en = e[self.neighbors] * self.neighbor_mask[..., None]
        return e - np.einsum("tij,tj->ti", self.weights, en.reshape(self.T, -1))

    @cached_property
    def precision_band(self) -> np.ndarray:
        """Lower block band of the joint precision.

        ``band[t, l]`` is the ``(q, q)`` block ``Q[t, t-l]`` for
        ``l = 0..m``; blocks reaching before ``t = 0`` are zero.
        """
        T, q, m = self.T, self.q, self.m
        pid = np.arange(T) if self.pattern_id is None else self.pattern_id
        _, rows, pat = np.unique(pid, return_index=True, return_inverse=True)
        R = np.concatenate(
            [np.broadcast_to(np.eye(q), (len(rows), q, q)), -self.weights[rows]], axis=2
        )
        # per-pattern contribution R' F^{-1} R, plus an all-zero pattern for t >= T
        Mp = np.swapaxes(R, 1, 2) @ (self.cond_prec[rows] @ R)
        Mp = np.concatenate([Mp, np.zeros((1,) + Mp.shape[1:])]).reshape(-1, m + 1, q, m + 1, q)
        padded = np.concatenate([pat.reshape(-1), np.full(m, len(rows))])
        # band[t] depends on the patterns of t, ..., t+m only
        windows = np.lib.stride_tricks.sliding_window_view(padded, m + 1)
        # collapse runs of identical windows (the bulk of a regular grid)
        change = np.concatenate([[True], np.any(windows[1:] != windows[:-1], axis=1)])
        uw = windows[change]
        inverse = np.cumsum(change) - 1
        pos, lag_of = np.nonzero(np.tri(m + 1, dtype=bool)[::-1])
        terms = Mp[uw[:, pos], pos, :, pos + lag_of, :]
        ub = np.einsum("upij,pl->ulij", terms, np.eye(m + 1)[lag_of])
        band = ub[inverse.reshape(-1)]
        for lag in range(1, m + 1):
            band[:lag, lag] = 0.0
        return band

    def precision_matvec(self, e: np.ndarray) -> np.ndarray:
        """Joint precision times a ``(T, q)`` field."""
        band = self.precision_band
        out = np.einsum("tij,tj->ti", band[:, 0], e)
        for lag in range(1, min(self.m, self.T - 1) + 1):
            blk = band[lag:, lag]
            out[lag:] += np.einsum("tij,tj->ti", blk, e[:-lag])
            out[:-lag] += np.einsum("tji,tj->ti", blk, e[lag:])
        return out

    def dense_precision(self) -> np.ndarray:
        """Dense ``(T q, T q)`` precision, for checks on small problems."""
        T, q = self.T, self.q
        Q = np.zeros((T * q, T * q))
        band = self.precision_band
        for t in range(T):
            for lag in range(min(self.m, t) + 1):
                blk = band[t, lag]
                s = t - lag
                Q[t * q:(t + 1) * q, s * q:(s + 1) * q] = blk
                Q[s * q:(s + 1) * q, t * q:(t + 1) * q] = blk.T
        return Q


@lru_cache(maxsize=16)
def _lag_layout(times_key: bytes, T: int, m: int):
    """Neighbor arrays plus the grouping of time points by lag pattern.

    Depends on the times and ``m`` only, so it is shared by every factor
    built on the same grid.
    """
    times = np.frombuffer(times_key, dtype=float)
    nbr, mask = _neighbor_arrays(T, m)
    counts = mask.sum(axis=1)
    lags = np.where(mask, times[:, None] - times[nbr], 0.0)
    ref = max(float(lags.max()), 1e-300)
    pattern_id = np.empty(T, dtype=np.int64)
    groups = []
    n_pat = 0
    for c in np.unique(counts):
        rows = np.flatnonzero(counts == c)
        pat = lags[rows, :c]
        _, first, inverse = np.unique(
            np.round(pat / ref, 10), axis=0, return_index=True, return_inverse=True
        )
        inverse = inverse.reshape(-1)
        offs = np.concatenate([np.zeros((len(first), 1)), pat[first]], axis=1)
        pair = np.abs(offs[:, :, None] - offs[:, None, :])
        pattern_id[rows] = n_pat + inverse
        groups.append((int(c), n_pat, len(first), pair))
        n_pat += len(first)
    for arr in (nbr, mask, pattern_id):
        arr.flags.writeable = False
    return nbr, mask, pattern_id, groups, n_pat


def build_nngp_factor(grid_times, params: GPParams, m: int) -> NNGPFactor:
    """Conditional regressions of each ``omega_t`` on its neighbor blocks.

    Time points sharing the same pattern of lags to their neighbors share one
    conditional, so a regular grid costs ``O(m)`` factorizations.
    """
    times = np.ascontiguousarray(grid_times, dtype=float)
    T = len(times)
    if T < 1:
        raise ValueError("need at least one time point")
    if T > 1 and not np.all(np.diff(times) > 0):
        raise ValueError("times must be strictly increasing")
    if m < 1:
        raise ValueError("need m >= 1")
    q = params.K - 1
    A = params.loading
    nbr, mask, pattern_id, groups, n_pat = _lag_layout(times.tobytes(), T, m)

    W_pat = np.zeros((n_pat, q, m * q))
    F_pat = np.empty((n_pat, q, q))
    L_pat = np.empty((n_pat, q, q))
    for c, start, n_u, pair in groups:
        sl = slice(start, start + n_u)
        corr = np.exp(-pair[..., None] * params.decays)
        # block (a, b) of the stacked covariance is A diag(corr_ab) A'
        blocks = (corr[..., None, :] * A) @ A.T
        cov = blocks.transpose(0, 1, 3, 2, 4).reshape(n_u, (c + 1) * q, (c + 1) * q)
        c_tt = cov[:, :q, :q]
        if c == 0:
            F = c_tt
        else:
            c_nn = cov[:, q:, q:]
            c_nt = cov[:, q:, :q]
            L = _chol_with_jitter(c_nn)
            tmp = np.linalg.solve(L, c_nt)
            W = np.swapaxes(np.linalg.solve(np.swapaxes(L, -1, -2), tmp), -1, -2)
            F = c_tt - W @ c_nt
            W_pat[sl, :, : c * q] = W
        F = 0.5 * (F + np.swapaxes(F, -1, -2))
        F_pat[sl] = F
        L_pat[sl] = _chol_with_jitter(F)
    per_pat = np.log(np.diagonal(L_pat, axis1=1, axis2=2)).sum(axis=1)
    log_det = 2.0 * float(np.bincount(pattern_id, minlength=n_pat) @ per_pat)
    return NNGPFactor(times, m, nbr, mask, W_pat[pattern_id], F_pat[pattern_id],
                      L_pat[pattern_id], log_det, pattern_id)


def nngp_logdensity(omega, mean, factor: NNGPFactor) -> float:
    """NNGP log-density of an ``omega`` field of shape ``(T, K-1)``."""
    omega = np.asarray(omega, dtype=float)
    mean = np.asarray(mean, dtype=float)
    shape = (factor.T, factor.q)
    if omega.shape != shape or mean.shape != shape:
        raise ValueError(f"expected fields of shape {shape}, got {omega.shape} and {mean.shape}")
    r = factor.residuals(omega - mean)
    quad = float(np.einsum("ti,tij,tj->", r, factor.cond_prec, r))
    return -0.5 * (factor.log_det + quad + omega.size * LOG_2PI)


def nngp_sample_prior(mean, factor: NNGPFactor, rng: np.random.Generator) -> np.ndarray:
    """Ancestral draw ``omega_t ~ N(mean_t + W_t e_N(t), F_t)`` in time order."""
    T, q, m = factor.T, factor.q, factor.m
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (T, q))
    z = rng.standard_normal((T, q))
    e = np.zeros((T, q))
    for t in range(T):
        c = int(factor.neighbor_mask[t].sum())
        cm = factor.weights[t][:, : c * q] @ e[factor.neighbors[t, :c]].reshape(-1) if c else 0.0
        e[t] = cm + factor.cond_chol[t] @ z[t]
    return mean + e


def dense_omega_cov(times, params: GPParams) -> np.ndarray:
    """Exact ``(T(K-1), T(K-1))`` covariance of the stacked field (time-major)."""
    times = np.asarray(times, dtype=float)
    T, q = len(times), params.K - 1
    lag = np.abs(times[:, None] - times[None, :])
    blocks = omega_cross_cov(lag, params)
    return blocks.transpose(0, 2, 1, 3).reshape(T * q, T * q)
