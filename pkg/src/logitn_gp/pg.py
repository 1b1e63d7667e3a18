"""Polya-Gamma variates PG(b, c) for integer ``b``.

PG(1, c) is drawn exactly with Devroye's alternating-series accept/reject
scheme on the exponentially tilted Jacobi density; PG(b, c) for integer
``b`` is the sum of ``b`` independent PG(1, c) draws.  Everything is
vectorized over ``c`` and driven by an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_ndtr

__all__ = ["pg_sample", "pg_mean", "pg_var", "pg_sample_series"]

_TRUNC = 0.64
_C_MAX = 700.0
_MAX_TERMS = 200
_PI2 = np.pi ** 2


def pg_mean(b, c):
    """``E[PG(b, c)] = b / (2c) tanh(c / 2)``, with the limit ``b/4`` at 0."""
    b = np.asarray(b, dtype=float)
    c = np.abs(np.asarray(c, dtype=float))
    if np.any(b <= 0):
        raise ValueError("b must be positive")
    small = c < 1e-4
    cs = np.where(small, 1.0, c)
    out = np.where(small, b * (0.25 - c * c / 48.0), b / (2.0 * cs) * np.tanh(cs / 2.0))
    return float(out) if out.ndim == 0 else out


def pg_var(b, c):
    """Variance of PG(b, c); series branch near ``c = 0`` where it tends to ``b/24``."""
    b = np.asarray(b, dtype=float)
    c = np.abs(np.asarray(c, dtype=float))
    if np.any(b <= 0):
        raise ValueError("b must be positive")
    small = c < 1e-3
    cs = np.where(small, 1.0, c)
    big = b / (4.0 * cs ** 3) * (np.sinh(cs) - cs) / np.cosh(cs / 2.0) ** 2
    out = np.where(small, b * (1.0 / 24.0 - c * c / 120.0), big)
    return float(out) if out.ndim == 0 else out


def _series_coef(n: int, x: np.ndarray) -> np.ndarray:
    """Piecewise coefficients a_n(x) of the Jacobi density series."""
    k = (n + 0.5) * np.pi
    out = np.zeros_like(x)
    hi = x > _TRUNC
    out[hi] = k * np.exp(-0.5 * k * k * x[hi])
    lo = (~hi) & (x > 0)
    xl = x[lo]
    out[lo] = np.exp(-1.5 * (np.log(0.5 * np.pi) + np.log(xl)) + np.log(k) - 2.0 * (n + 0.5) ** 2 / xl)
    return out


def _mass_texpon(z: np.ndarray) -> np.ndarray:
    """Probability of proposing from the right (exponential) piece."""
    t = _TRUNC
    fz = _PI2 / 8.0 + 0.5 * z * z
    root = np.sqrt(1.0 / t)
    b = root * (t * z - 1.0)
    a = -root * (t * z + 1.0)
    x0 = np.log(fz) + fz * t
    xb = x0 - z + log_ndtr(b)
    xa = x0 + z + log_ndtr(a)
    # 1 / (1 + q/p) with q/p = 4/pi (e^xb + e^xa), evaluated in log space
    return expit(-(np.log(4.0 / np.pi) + np.logaddexp(xb, xa)))


def _rtigauss(z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Gaussian(1/z, 1) truncated to (0, TRUNC)."""
    t = _TRUNC
    out = np.empty_like(z)
    small = z < 1.0 / t

    # mean above the truncation point: proposals from the z = 0 law
    pend = np.flatnonzero(small)
    while pend.size:
        e1 = rng.standard_exponential(pend.size)
        e2 = rng.standard_exponential(pend.size)
        bad = e1 * e1 > 2.0 * e2 / t
        while bad.any():
            nb = int(bad.sum())
            e1[bad] = rng.standard_exponential(nb)
            e2[bad] = rng.standard_exponential(nb)
            bad = e1 * e1 > 2.0 * e2 / t
        x = t / (1.0 + e1 * t) ** 2
        alpha = np.exp(-0.5 * z[pend] ** 2 * x)
        ok = rng.random(pend.size) <= alpha
        out[pend[ok]] = x[ok]
        pend = pend[~ok]

    pend = np.flatnonzero(~small)
    while pend.size:
        mu = 1.0 / z[pend]
        y = rng.standard_normal(pend.size) ** 2
        mu_y = mu * y
        x = mu + 0.5 * mu * mu_y - 0.5 * mu * np.sqrt(4.0 * mu_y + mu_y * mu_y)
        flip = rng.random(pend.size) > mu / (mu + x)
        x[flip] = mu[flip] ** 2 / x[flip]
        ok = x <= t
        out[pend[ok]] = x[ok]
        pend = pend[~ok]
    return out


def _pg1(c: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    z = 0.5 * np.minimum(np.abs(c), _C_MAX)
    out = np.empty_like(z)
    pend = np.arange(z.size)
    while pend.size:
        zz = z[pend]
        fz = _PI2 / 8.0 + 0.5 * zz * zz
        right = rng.random(pend.size) < _mass_texpon(zz)
        x = np.empty_like(zz)
        x[right] = _TRUNC + rng.standard_exponential(int(right.sum())) / fz[right]
        if (~right).any():
            x[~right] = _rtigauss(zz[~right], rng)

        s = _series_coef(0, x)
        u = rng.random(pend.size) * s
        accepted = np.zeros(pend.size, dtype=bool)
        live = np.ones(pend.size, dtype=bool)
        for n in range(1, _MAX_TERMS):
            idx = np.flatnonzero(live)
            if idx.size == 0:
                break
            a = _series_coef(n, x[idx])
            if n % 2:
                s[idx] -= a
                hit = u[idx] <= s[idx]
                accepted[idx[hit]] = True
                live[idx[hit]] = False
            else:
                s[idx] += a
                live[idx[u[idx] > s[idx]]] = False
        out[pend[accepted]] = 0.25 * x[accepted]
        pend = pend[~accepted]
    return out


def pg_sample(b, c, rng: np.random.Generator):
    """Draw PG(b, c) for integer ``b >= 1``; broadcasts ``b`` against ``c``.

    Parameters
    ----------
    b : int or array of int
        Shape parameter.  Non-integer values are rejected.
    c : float or array
        Tilting parameter; ``|c|`` is capped at 700.
    rng : numpy.random.Generator

    Returns
    -------
    float or ndarray
        Strictly positive draws with the broadcast shape of ``b`` and ``c``.
    """
    b_arr = np.asarray(b)
    if np.any(b_arr <= 0):
        raise ValueError("b must be positive")
    if np.any(np.asarray(b_arr, dtype=float) != np.round(b_arr)):
        raise ValueError("only integer b is supported")
    c_arr = np.asarray(c, dtype=float)
    if np.isnan(c_arr).any():
        raise ValueError("c must not be NaN")
    b_arr, c_arr = np.broadcast_arrays(b_arr.astype(np.int64), c_arr)
    shape = c_arr.shape
    bf = b_arr.reshape(-1)
    cf = c_arr.reshape(-1)
    if np.all(bf == 1):
        out = _pg1(cf.copy(), rng)
    else:
        rep = np.repeat(np.arange(cf.size), bf)
        out = np.bincount(rep, weights=_pg1(cf[rep], rng), minlength=cf.size)
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out


def pg_sample_series(b, c, rng: np.random.Generator, size: int, terms: int = 2000) -> np.ndarray:
    """Truncated infinite-convolution representation of PG(b, c).

    ``(1/2pi^2) sum_k g_k / ((k - 1/2)^2 + c^2/(4 pi^2))`` with
    ``g_k ~ Gamma(b, 1)``.  Slightly biased low by the truncation; used only
    as an independent reference for the exact sampler.
    """
    k = np.arange(terms) + 0.5
    denom = k * k + c * c / (4.0 * _PI2)
    out = np.empty(size)
    chunk = max(1, 2_000_000 // terms)
    for s in range(0, size, chunk):
        n = min(chunk, size - s)
        g = rng.gamma(b, 1.0, size=(n, terms))
        out[s:s + n] = (g / denom).sum(axis=1) / (2.0 * _PI2)
    return out
