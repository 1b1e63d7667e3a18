"""Posterior summaries: relabeling, probability bands, predictive densities, log-ratio curves."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import log_ndtr

from ..logitn import logratio_corr_curve, softmax_reduced
from ..sampler.chain import SampleStore

__all__ = [
    "relabel",
    "permute_store",
    "ProbSummary",
    "probability_timeseries",
    "projected_normal_logpdf",
    "step_length_kde",
    "PredictiveDensities",
    "predictive_densities",
    "LogratioReport",
    "logratio_report",
]


def _permute_beta(beta: np.ndarray, perms: np.ndarray, p: int) -> np.ndarray:
    """Re-reference regression blocks after permuting categories.

    ``beta`` holds ``K-1`` blocks of size ``p`` against a zero last block.
    """
    n, K = perms.shape
    full = np.concatenate([beta.reshape(n, K - 1, p), np.zeros((n, 1, p))], axis=1)
    full = np.take_along_axis(full, perms[:, :, None], axis=1)
    return (full[:, :-1] - full[:, -1:]).reshape(n, (K - 1) * p)


def _permute_omega(omega: np.ndarray, perms: np.ndarray) -> np.ndarray:
    n, T, q = omega.shape
    full = np.concatenate([omega, np.zeros((n, T, 1))], axis=2)
    full = np.take_along_axis(full, perms[:, None, :], axis=2)
    return full[..., :-1] - full[..., -1:]


def permute_store(store: SampleStore, perms) -> SampleStore:
    """Relabel every retained draw; ``perms[i][k]`` is the old label of new label ``k``."""
    perms = np.asarray(perms, dtype=np.int64)
    n, K = store.n, store.K
    if perms.shape != (n, K):
        raise ValueError(f"need one permutation of {K} labels per draw")
    take1 = lambda a: np.take_along_axis(a, perms.reshape((n, K) + (1,) * (a.ndim - 2)), axis=1)
    sigma = np.take_along_axis(store.sigma_star, perms[:, :, None], axis=1)
    sigma = np.take_along_axis(sigma, perms[:, None, :], axis=2)
    inv = np.argsort(perms, axis=1)
    fperm = perms[store.field_index]
    finv = inv[store.field_index]
    z = store.z.astype(np.int64)
    zf = np.where(z >= 0, np.take_along_axis(finv, np.maximum(z, 0), axis=1), z).astype(store.z.dtype)
    mz = store.map_z
    if store.map_index >= 0:
        mz = np.where(mz >= 0, inv[store.map_index][np.maximum(mz, 0)], mz)
    out = replace(
        store,
        xi=take1(store.xi), omega_cov=take1(store.omega_cov), decays=take1(store.decays),
        sigma_star=sigma, beta=_permute_beta(store.beta, perms, store.p),
        omega_field=_permute_omega(store.omega_field, fperm), z=zf, map_z=mz,
    )
    if len(np.unique(perms, axis=0)) == 1:
        out.pi_mean = store.pi_mean[:, perms[0]]
    else:
        # mixed permutations: rebuild the mean from the stored sub-grid
        out.pi_mean = softmax_reduced(out.omega_field).mean(axis=0) if out.omega_field.size else store.pi_mean
    return out


def relabel(store: SampleStore, n_pass: int = 10) -> tuple[SampleStore, np.ndarray]:
    """Undo label switching by matching each draw of ``xi`` to a reference.

    The reference starts at the last retained draw and is replaced by the
    mean of the relabelled draws until the assignment stops changing.
    Returns the relabelled store and the permutations used.
    """
    xi = store.xi
    n, K = store.n, store.K
    ref = xi[-1]
    perms = np.tile(np.arange(K), (n, 1))
    for _ in range(n_pass):
        # cost[i, new, old] = |xi_old - ref_new|^2
        cost = ((xi[:, None, :, :] - ref[None, :, None, :]) ** 2).sum(axis=-1)
        new = np.stack([linear_sum_assignment(c)[1] for c in cost])
        ref = np.take_along_axis(xi, new[:, :, None], axis=1).mean(axis=0)
        if np.array_equal(new, perms):
            break
        perms = new
    return permute_store(store, perms), perms


@dataclass
class ProbSummary:
    mean: np.ndarray
    quantiles: np.ndarray
    levels: tuple

    def table(self, times) -> tuple[list[str], np.ndarray]:
        T, K = self.mean.shape
        cols = ["time"]
        parts = [np.asarray(times, dtype=float)[:, None]]
        for k in range(K):
            cols.append(f"pi.{k + 1}.mean")
            parts.append(self.mean[:, k:k + 1])
            for lv, qk in zip(self.levels, self.quantiles):
                cols.append(f"pi.{k + 1}.q{lv:g}")
                parts.append(qk[:, k:k + 1])
        return cols, np.concatenate(parts, axis=1)


def probability_timeseries(store: SampleStore, quantiles=(0.025, 0.975)) -> ProbSummary:
    """Posterior mean and pointwise quantile bands of ``pi_{t,k}``.

    The mean uses every retained draw; bands use the stored sub-grid of
    latent fields.
    """
    levels = tuple(float(q) for q in quantiles)
    if any(not 0 <= q <= 1 for q in levels):
        raise ValueError("quantiles must lie in [0, 1]")
    draws = store.prob_draws()
    mean = store.pi_mean / store.pi_mean.sum(axis=1, keepdims=True)
    qs = np.quantile(draws, levels, axis=0) if levels else np.empty((0,) + mean.shape)
    return ProbSummary(mean, qs, levels)


def projected_normal_logpdf(theta, mu, cov, ridge: float = 1e-10) -> np.ndarray:
    """Log-density of the direction of ``N_2(mu, cov)`` at angles ``theta``.

    With ``u = (cos theta, sin theta)``, ``A = u' S^-1 u``, ``B = u' S^-1 mu``,
    ``C = mu' S^-1 mu`` and ``D = B / sqrt(A)``::

        f = [exp(-C/2) + D sqrt(2 pi) Phi(D) exp((D^2 - C)/2)] / (2 pi A sqrt|S|)
    """
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    cov = np.asarray(cov, dtype=float) + ridge * np.eye(2)
    P = np.linalg.inv(cov)
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    A = np.einsum("...i,ij,...j->...", u, P, u)
    B = u @ (P @ mu)
    C = float(mu @ P @ mu)
    D = B / np.sqrt(A)
    # log of exp(-C/2) + D sqrt(2pi) exp(log Phi(D) + D^2/2 - C/2), stable for either sign of D
    first = -0.5 * C * np.ones_like(D)
    with np.errstate(divide="ignore"):
        second = np.log(np.abs(D)) + 0.5 * np.log(2 * np.pi) + log_ndtr(D) + 0.5 * D * D - 0.5 * C
    pos = D >= 0
    hi = np.maximum(first, second)
    lo = np.minimum(first, second)
    with np.errstate(divide="ignore"):
        log_bracket = np.where(
            pos,
            hi + np.log1p(np.exp(lo - hi)),
            first + np.log1p(-np.exp(np.minimum(second - first, 0.0))),
        )
    _, logdet = np.linalg.slogdet(cov)
    return log_bracket - np.log(2 * np.pi) - np.log(A) - 0.5 * logdet


def step_length_kde(samples, grid_r, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian KDE of positive samples with reflection at zero.

    ``bandwidth`` defaults to Silverman's rule.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    r = np.asarray(grid_r, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    if bandwidth is None:
        iqr = np.subtract(*np.percentile(x, [75, 25]))
        spread = min(x.std(ddof=1), iqr / 1.34) if iqr > 0 else x.std(ddof=1)
        bandwidth = 0.9 * spread * n ** (-0.2)
    h = float(bandwidth) if bandwidth > 0 else 1e-3
    out = np.zeros_like(r)
    chunk = max(1, 4_000_000 // max(r.size, 1))
    for s in range(0, n, chunk):
        xs = x[s:s + chunk]
        d1 = (r[:, None] - xs[None]) / h
        d2 = (r[:, None] + xs[None]) / h
        out += (np.exp(-0.5 * d1 * d1) + np.exp(-0.5 * d2 * d2)).sum(axis=1)
    out /= n * h * np.sqrt(2 * np.pi)
    return np.where(r < 0, 0.0, out)


@dataclass
class PredictiveDensities:
    grid_theta: np.ndarray
    angle: np.ndarray
    grid_r: np.ndarray
    step: np.ndarray


def _draw_subset(n: int, max_draws: int | None) -> np.ndarray:
    if max_draws is None or n <= max_draws:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_draws).round().astype(int))


def predictive_densities(store: SampleStore, grid_r, grid_theta, mc_draws: int = 200,
                         rng: np.random.Generator | None = None,
                         max_draws: int | None = 500) -> PredictiveDensities:
    """Per-behaviour densities of turning angle and step length.

    Angle densities average the closed-form projected normal over retained
    draws.  Step-length densities pool ``mc_draws`` normal samples per draw
    and smooth them with :func:`step_length_kde`.  At most ``max_draws``
    evenly spaced retained draws are used.
    """
    grid_r = np.asarray(grid_r, dtype=float)
    grid_theta = np.asarray(grid_theta, dtype=float)
    if grid_r.size == 0 or grid_theta.size == 0:
        raise ValueError("grids must be nonempty")
    if mc_draws < 1:
        raise ValueError("mc_draws must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    idx = _draw_subset(store.n, max_draws)
    K = store.K
    angle = np.zeros((K, grid_theta.size))
    step = np.zeros((K, grid_r.size))
    for k in range(K):
        samples = np.empty((len(idx), mc_draws))
        for j, i in enumerate(idx):
            mu, cov = store.xi[i, k], store.omega_cov[i, k]
            angle[k] += np.exp(projected_normal_logpdf(grid_theta, mu, cov))
            L = np.linalg.cholesky(cov)
            pts = mu + rng.standard_normal((mc_draws, 2)) @ L.T
            samples[j] = np.hypot(pts[:, 0], pts[:, 1])
        angle[k] /= len(idx)
        step[k] = step_length_kde(samples, grid_r)
    return PredictiveDensities(grid_theta, angle, grid_r, step)


@dataclass
class LogratioReport:
    lags: np.ndarray
    pairs: list
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def logratio_report(store: SampleStore, lags, pairs=None, levels=(0.025, 0.975),
                    max_draws: int | None = 2000) -> LogratioReport:
    """Normalized log-ratio correlation curves with posterior bands.

    ``pairs`` lists 1-based ``(i, j, k, l)``; by default every
    ``(i, j, 1, 1)`` with ``2 <= i <= j <= K``.
    """
    lags = np.asarray(lags, dtype=float)
    K = store.K
    if pairs is None:
        pairs = [(i, j, 1, 1) for i in range(2, K + 1) for j in range(i, K + 1)]
    idx = _draw_subset(store.n, max_draws)
    curves = np.empty((len(pairs), len(idx), lags.size))
    for j, i in enumerate(idx):
        params = store.gp_params(i)
        for c, (a, b, k, l) in enumerate(pairs):
            curves[c, j] = logratio_corr_curve(a, b, k, l, lags, params)
    lo, hi = np.quantile(curves, levels, axis=1)
    return LogratioReport(lags, list(pairs), curves.mean(axis=1), lo, hi)
