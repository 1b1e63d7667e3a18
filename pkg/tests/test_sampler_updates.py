import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import expit

from logitn_gp.gpcore import GPParams, build_nngp_factor, dense_omega_cov, nngp_sample_prior
from logitn_gp.sampler import (
    LatentState,
    MissingCoordSampler,
    MixtureParams,
    MovementData,
    Priors,
    mixture_logpdf,
    sample_invwishart,
    update_labels,
    update_mixture,
    update_omega_field,
)


def _mix(xi, cov=None):
    xi = np.asarray(xi, dtype=float)
    cov = np.tile(np.eye(2), (len(xi), 1, 1)) if cov is None else cov
    return MixtureParams(xi, cov)


# mixture_logpdf -------------------------------------------------------------

def test_mixture_logpdf_matches_scipy(rng):
    xi = rng.normal(size=(3, 2))
    A = rng.normal(size=(3, 2, 2))
    cov = A @ np.swapaxes(A, 1, 2) + 0.3 * np.eye(2)
    y = rng.normal(size=(7, 2))
    out = mixture_logpdf(y, MixtureParams(xi, cov))
    for k in range(3):
        np.testing.assert_allclose(out[:, k], stats.multivariate_normal(xi[k], cov[k]).logpdf(y), atol=1e-12)
    y[2] = np.nan
    assert np.all(mixture_logpdf(y, MixtureParams(xi, cov))[2] == 0.0)


# update_labels --------------------------------------------------------------

def test_labels_degenerate_pi(rng):
    y = rng.normal(size=(50, 2))
    pi = np.tile([1.0, 0.0, 0.0], (50, 1))
    z = update_labels(y, pi, _mix(rng.normal(size=(3, 2))), rng)
    assert np.all(z == 0)


def test_labels_symmetric(rng):
    n = 10000
    y = np.zeros((n, 2))
    z = update_labels(y, np.full((n, 3), 1 / 3), _mix(np.zeros((3, 2))), rng)
    freq = np.bincount(z, minlength=3) / n
    assert np.all(np.abs(freq - 1 / 3) < 3 * math.sqrt(2 / 9 / n))


def test_labels_separated(rng):
    n = 10000
    y = np.zeros((n, 2))
    z = update_labels(y, np.full((n, 2), 0.5), _mix([[0.0, 0.0], [100.0, 0.0]]), rng)
    assert np.mean(z == 0) > 0.999


def test_labels_missing_rows_use_pi(rng):
    n = 20000
    y = np.full((n, 2), np.nan)
    z = update_labels(y, np.tile([0.2, 0.8], (n, 1)), _mix([[0.0, 0.0], [5.0, 0.0]]), rng)
    assert abs(np.mean(z == 1) - 0.8) < 4 * math.sqrt(0.16 / n)


def test_labels_impossible(rng):
    y = np.array([[0.0, 0.0]])
    with pytest.raises(FloatingPointError):
        update_labels(y, np.array([[0.0, 0.0]]), _mix([[0.0, 0.0], [1.0, 0.0]]), rng)


# sample_invwishart / update_mixture -----------------------------------------

def test_invwishart_mean_matches_scipy(rng):
    df, S = 15.0, np.array([[2.0, 0.3], [0.3, 1.0]])
    draws = sample_invwishart(np.full(40000, df), np.tile(S, (40000, 1, 1)), rng)
    # closed-form entrywise variance of IW(df, S) in dimension 2
    a = df - 2
    var = ((a + 1) * S ** 2 + (a - 1) * np.outer(np.diag(S), np.diag(S))) / (a * (a - 1) ** 2 * (a - 3))
    err = np.abs(draws.mean(axis=0) - stats.invwishart(df, S).mean())
    assert np.all(err < 4 * np.sqrt(var / len(draws)))
    np.testing.assert_allclose(draws.var(axis=0), var, rtol=0.05)


def test_mixture_empty_components_draw_from_prior(rng):
    pr = Priors(xi_mean=[1.0, -2.0], xi_cov=[[4.0, 1.0], [1.0, 2.0]], omega_iw_df=8.0,
                omega_iw_scale=[[2.0, 0.5], [0.5, 1.0]])
    y = np.zeros((3, 2))
    z = np.full(3, -1)
    n = 10000
    cur = _mix(np.zeros((2, 2)))
    xis, covs = [], []
    for _ in range(n):
        m = update_mixture(y, z, pr, rng, current=cur)
        xis.append(m.xi[0])
        covs.append(m.omega_cov[1])
    xis, covs = np.array(xis), np.array(covs)
    se = np.sqrt(np.diag(pr.xi_cov) / n)
    assert np.all(np.abs(xis.mean(axis=0) - pr.xi_mean) < 4 * se)
    np.testing.assert_allclose(np.cov(xis.T), pr.xi_cov, rtol=0.08)
    np.testing.assert_allclose(covs.mean(axis=0), pr.omega_iw_scale / (8.0 - 3.0), rtol=0.05, atol=0.01)


def test_mixture_posterior_concentrates(rng):
    y = rng.normal(size=(10000, 2)) + [3.0, 0.0]
    z = np.ones(10000, dtype=int)
    m = update_mixture(y, z, Priors(), rng, current=_mix(np.zeros((2, 2))))
    for _ in range(5):
        m = update_mixture(y, z, Priors(), rng, current=m)
    np.testing.assert_allclose(m.xi[1], [3.0, 0.0], atol=0.05)
    np.testing.assert_allclose(m.omega_cov[1], np.eye(2), atol=0.06)


def test_mixture_pinned_prior_mean(rng):
    pr = Priors(xi_mean=[2.0, 1.0], xi_cov=1e-12 * np.eye(2))
    y = rng.normal(size=(100, 2))
    m = update_mixture(y, np.zeros(100, dtype=int), pr, rng, K=2)
    np.testing.assert_allclose(m.xi, [[2.0, 1.0], [2.0, 1.0]], atol=1e-4)


# update_omega_field ---------------------------------------------------------

def _one_point_setup(var):
    params = GPParams([0.0], np.diag([var / 2, var / 2]), [1.0, 1.0])
    factor = build_nngp_factor(np.array([0.0]), params, 1)
    return params, factor


def test_omega_single_bernoulli_posterior(rng):
    # T = 1, K = 2: omega | z=1 has density N(w; 0, v) * sigmoid(w)
    var = 4.0
    params, factor = _one_point_setup(var)
    X = np.ones((1, 1))
    state = LatentState(np.zeros(1), np.zeros((1, 1)), np.full((1, 1), 0.25))
    z = np.array([0])
    n, draws = 20000, np.empty(20000)
    for i in range(n + 200):
        om, pg = update_omega_field(z, state, params, factor, X, rng)
        state.omega_field, state.pg_aux = om, pg
        if i >= 200:
            draws[i - 200] = om[0, 0]
    dens = lambda w: stats.norm.pdf(w, scale=math.sqrt(var)) * expit(w)
    norm = integrate.quad(dens, -40, 40)[0]
    cdf = lambda w: integrate.quad(dens, -40, w)[0] / norm
    grid = np.quantile(draws, np.linspace(0.01, 0.99, 99))
    ks = max(abs(np.mean(draws <= g) - cdf(g)) for g in grid)
    assert ks < 0.02


def test_omega_prior_invariance_without_labels(rng):
    # one sweep from an exact prior draw leaves the prior law unchanged
    times = np.array([0.0, 0.5, 1.2, 1.5])
    params = GPParams([0.3, -0.2], [[2.0, 0.5, 0.1], [0.5, 1.5, 0.2], [0.1, 0.2, 1.0]], [1.0, 0.6, 1.4])
    factor = build_nngp_factor(times, params, 2)
    X = np.ones((4, 1))
    mean = params.mean_field(X)
    z = np.full(4, -1)
    n = 20000
    out = np.empty((n, 8))
    for i in range(n):
        om0 = nngp_sample_prior(mean, factor, rng)
        st = LatentState(np.zeros(4), om0, np.full((4, 2), 0.25))
        om, pg = update_omega_field(z, st, params, factor, X, rng)
        assert np.all(pg > 0)
        out[i] = om.reshape(-1)
    # covariance implied by the NNGP factor
    cov = np.linalg.inv(factor.dense_precision())
    emp_mean = out.mean(axis=0)
    assert np.all(np.abs(emp_mean - mean.reshape(-1)) < 4 * np.sqrt(np.diag(cov) / n))
    emp = np.cov(out.T)
    se = np.sqrt((cov ** 2 + np.outer(np.diag(cov), np.diag(cov))) / n)
    assert np.all(np.abs(emp - cov) < 4 * se)


def test_omega_contract(rng):
    times = np.arange(30.0)
    params = GPParams(np.zeros(2), np.eye(3), [1.0, 1.0, 1.0])
    factor = build_nngp_factor(times, params, 3)
    st = LatentState(np.zeros(30), rng.normal(size=(30, 2)), np.full((30, 2), 0.25))
    z = rng.integers(-1, 3, 30)
    om, pg = update_omega_field(z, st, params, factor, np.ones((30, 1)), rng)
    assert np.all(np.isfinite(om)) and np.all(pg > 0)


# missing coordinates --------------------------------------------------------

def test_missing_sampler_noop(rng):
    coords = np.array([[0, 0], [1, 0], [2, 0], [3, 0.0]])
    d = MovementData.from_coords(coords, np.arange(4.0))
    s = MissingCoordSampler(d)
    y = s.step(np.ones((2, 1)), _mix([[1.0, 0.0]]), rng)
    np.testing.assert_allclose(y, [[1, 0], [1, 0]], atol=1e-15)


def test_missing_sampler_midpoint(rng):
    coords = np.array([[0, 0], [1, 0], [np.nan, np.nan], [3, 0], [4, 0.0]])
    d = MovementData.from_coords(coords, np.arange(5.0))
    s = MissingCoordSampler(d, init_scale=0.3)
    s.coords[2] = [2.4, 0.6]
    mix = MixtureParams([[1.0, 0.0]], [0.01 * np.eye(2)])
    pi = np.ones((3, 1))
    draws = []
    for i in range(11000):
        s.step(pi, mix, rng)
        if i >= 1000:
            draws.append(s.coords[2].copy())
    mean = np.mean(draws, axis=0)
    assert np.hypot(*(mean - [2.0, 0.0])) < 0.05 * 2.0


def test_missing_sampler_zero_scale(rng):
    coords = np.array([[0, 0], [1, 0], [np.nan, np.nan], [3, 0], [4, 0.0]])
    d = MovementData.from_coords(coords, np.arange(5.0))
    s = MissingCoordSampler(d, init_scale=0.0)
    start = s.coords.copy()
    for _ in range(50):
        s.step(np.full((3, 2), 0.5), _mix([[1.0, 0.0], [0.0, 1.0]]), rng)
    np.testing.assert_array_equal(s.coords, start)
