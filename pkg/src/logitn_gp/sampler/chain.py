"""Chain driver and storage of retained draws."""

from __future__ import annotations

import csv
import sys
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2

from ..gpcore import GPParams, build_nngp_factor
from ..logitn import log_softmax_reduced, softmax_reduced
from .hyper import AdaptiveProposal, ThetaMap, update_gp_hyper
from .state import ChainConfig, LatentState, MixtureParams, MovementData, Priors
from .updates import (
    MissingCoordSampler,
    mixture_logpdf,
    update_labels,
    update_mixture,
    update_omega_field,
)

__all__ = [
    "SamplerError",
    "SampleStore",
    "ChainState",
    "gibbs_sweep",
    "run_chain",
    "initial_state",
    "complete_loglik_terms",
]

MAX_FIELD_DRAWS = 2000


class SamplerError(RuntimeError):
    """A component update failed; ``iteration`` is the 1-based sweep index."""

    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"sampler failed at iteration {iteration}: {type(cause).__name__}: {cause}")
        self.iteration = iteration


def complete_loglik_terms(y, z, log_pi, loglik_tk, observed) -> float:
    """``sum_t log N(y_t | z_t) + log pi_{t, z_t}`` over observed ``t``."""
    t = np.flatnonzero(observed & (z >= 0))
    zz = z[t]
    return float(np.sum(loglik_tk[t, zz] + log_pi[t, zz]))


@dataclass
class SampleStore:
    """Retained draws of one chain.

    Scalar-sized parameters are kept for every retained draw.  The latent
    field and labels are kept on a sub-grid of at most ``MAX_FIELD_DRAWS``
    retained draws (``field_index`` gives their positions); the labels of
    the draw with the highest complete log-likelihood are always kept.
    """

    K: int
    p: int
    times: np.ndarray
    xi: np.ndarray
    omega_cov: np.ndarray
    beta: np.ndarray
    decays: np.ndarray
    sigma_star: np.ndarray
    pi_mean: np.ndarray
    loglik: np.ndarray
    field_index: np.ndarray
    omega_field: np.ndarray
    z: np.ndarray
    map_index: int
    map_z: np.ndarray
    map_loglik: float
    accept: np.ndarray
    n_obs: int
    iterations: np.ndarray
    config: ChainConfig
    elapsed: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.loglik)

    def gp_params(self, i: int) -> GPParams:
        return GPParams(self.beta[i], self.sigma_star[i], self.decays[i])

    def mixture(self, i: int) -> MixtureParams:
        return MixtureParams(self.xi[i], self.omega_cov[i])

    def prob_draws(self) -> np.ndarray:
        """``(n_field, T, K)`` probability fields of the stored sub-grid."""
        return softmax_reduced(self.omega_field)

    def acceptance_rate(self, after_burnin: bool = True) -> float:
        a = self.accept[self.config.burnin:] if after_burnin else self.accept
        return float(a.mean()) if a.size else float("nan")

    def acceptance_trace(self, window: int = 1000) -> np.ndarray:
        """Acceptance rate over consecutive windows of ``window`` iterations."""
        n = len(self.accept) // window
        return self.accept[: n * window].reshape(n, window).mean(axis=1)

    def columns(self) -> list[str]:
        K = self.K
        cols = []
        for k in range(1, K + 1):
            cols += [f"xi.{k}.1", f"xi.{k}.2"]
        for k in range(1, K + 1):
            cols += [f"Omega.{k}.11", f"Omega.{k}.12", f"Omega.{k}.22"]
        cols += [f"beta.{j}" for j in range(1, self.beta.shape[1] + 1)]
        cols += [f"phi.{k}" for k in range(1, K + 1)]
        cols += [f"Sigma.{k}{l}" for k in range(1, K + 1) for l in range(k, K + 1)]
        return cols + ["loglik"]

    def table(self) -> np.ndarray:
        """One row per retained draw, matching :meth:`columns`."""
        K = self.K
        iu = np.triu_indices(K)
        parts = [
            self.xi.reshape(self.n, 2 * K),
            np.stack([self.omega_cov[:, :, 0, 0], self.omega_cov[:, :, 0, 1],
                      self.omega_cov[:, :, 1, 1]], axis=-1).reshape(self.n, 3 * K),
            self.beta,
            self.decays,
            self.sigma_star[:, iu[0], iu[1]],
            self.loglik[:, None],
        ]
        return np.concatenate(parts, axis=1)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for row in self.table():
                w.writerow([format(v, ".17g") for v in row])


@dataclass
class ChainState:
    """Everything a sweep updates: latent quantities, mixture and GP parameters."""

    latent: LatentState
    mixture: MixtureParams
    params: GPParams
    factor: object
    theta: np.ndarray


def gibbs_sweep(chain: ChainState, y, observed, design_X, times, m: int, priors: Priors,
                theta_map: ThetaMap, adapt: AdaptiveProposal, rng: np.random.Generator,
                imputer: MissingCoordSampler | None = None) -> tuple[np.ndarray, bool]:
    """One sweep over missing coordinates, labels, mixture, field and hyperparameters.

    ``chain`` is updated in place.  Returns the (possibly re-imputed)
    increments and whether the hyperparameter proposal was accepted.
    """
    pi = softmax_reduced(chain.latent.omega_field)
    if imputer is not None:
        y = imputer.step(pi, chain.mixture, rng)
    ll_tk = mixture_logpdf(y, chain.mixture)
    z = update_labels(y, pi, chain.mixture, rng, loglik=ll_tk)
    if imputer is None:
        z[~observed] = -1
    chain.latent.z = z
    chain.mixture = update_mixture(y, z, priors, rng, current=chain.mixture)
    omega, pg = update_omega_field(z, chain.latent, chain.params, chain.factor, design_X, rng)
    chain.latent.omega_field, chain.latent.pg_aux = omega, pg
    res = update_gp_hyper(omega, design_X, theta_map, chain.theta, chain.factor, adapt, times, m, rng)
    chain.params, chain.factor, chain.theta = res.params, res.factor, res.theta
    return y, res.accepted


def _features(y: np.ndarray) -> np.ndarray:
    r = np.hypot(y[:, 0], y[:, 1])
    th = np.arctan2(y[:, 1], y[:, 0])
    sd = r.std()
    r = (r - r.mean()) / (sd if sd > 0 else 1.0)
    return np.column_stack([r, np.cos(th), np.sin(th)])


def initial_state(y: np.ndarray, K: int, priors: Priors, rng: np.random.Generator):
    """k-means labels on (step length, cos, sin) and per-cluster moments."""
    obs = np.isfinite(y).all(axis=1)
    yo = y[obs]
    z = np.full(len(y), -1, dtype=np.int64)
    if len(yo) >= K:
        _, lab = kmeans2(_features(yo), K, minit="++", seed=rng)
    else:
        lab = np.arange(len(yo)) % K
    z[obs] = lab
    xi = np.zeros((K, 2))
    cov = np.zeros((K, 2, 2))
    pooled = np.cov(yo.T) if len(yo) > 2 else np.eye(2)
    for k in range(K):
        pts = yo[lab == k]
        xi[k] = pts.mean(axis=0) if len(pts) else priors.xi_mean
        c = np.cov(pts.T) if len(pts) > 2 else pooled
        cov[k] = c + 1e-6 * max(np.trace(c), 1.0) * np.eye(2)
    return z, MixtureParams(xi, cov)


def run_chain(data: MovementData, design_X, config: ChainConfig, priors: Priors | None = None,
              rng: np.random.Generator | None = None, progress: bool = False) -> SampleStore:
    """Run one MCMC chain and keep every ``thin``-th draw after ``burnin``.

    Each sweep updates, in order: missing coordinates (when ``data`` carries
    coordinates with gaps), labels, mixture parameters, the latent log-ratio
    field and finally the GP hyperparameters.  The chain is a deterministic
    function of ``config.seed`` unless ``rng`` is supplied.
    """
    priors = Priors() if priors is None else priors
    rng = np.random.default_rng(config.seed) if rng is None else rng
    K, m = config.K, config.m
    X = np.asarray(design_X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != data.n:
        raise ValueError(f"design has {X.shape[0]} rows for {data.n} increments")
    if not np.all(np.isfinite(X)):
        raise ValueError("design matrix must be finite")
    T, p = X.shape
    times = data.times
    observed = data.y_observed.copy()

    imputer = None
    y = data.y.copy()
    if data.has_missing_coords:
        imputer = MissingCoordSampler(data, target=config.adapt_target, decay=config.adapt_decay)
        y = imputer.increments()
    y_init = np.where(observed[:, None], data.y, np.nan)
    z, mixture = initial_state(y_init, K, priors, rng)
    if imputer is None:
        z[~observed] = -1

    theta_map = ThetaMap(K, p, priors)
    params = GPParams(np.zeros(p * (K - 1)), np.eye(K),
                      np.full(K, np.sqrt(priors.decay_lower * priors.decay_upper)))
    latent = LatentState(np.maximum(z, 0), np.zeros((T, K - 1)), np.full((T, K - 1), 0.25))
    latent.z = z
    chain = ChainState(latent, mixture, params, build_nngp_factor(times, params, m), theta_map.pack(params))
    adapt = AdaptiveProposal(theta_map.dim, target=config.adapt_target, decay=config.adapt_decay)

    n_keep = config.n_retained
    stride = max(1, -(-n_keep // MAX_FIELD_DRAWS))
    n_field = -(-n_keep // stride)
    out = dict(
        xi=np.empty((n_keep, K, 2)), omega_cov=np.empty((n_keep, K, 2, 2)),
        beta=np.empty((n_keep, p * (K - 1))), decays=np.empty((n_keep, K)),
        sigma_star=np.empty((n_keep, K, K)), loglik=np.empty(n_keep),
        iterations=np.empty(n_keep, dtype=np.int64),
    )
    field_draws = np.empty((n_field, T, K - 1))
    z_draws = np.empty((n_field, T), dtype=np.int8 if K < 128 else np.int32)
    pi_sum = np.zeros((T, K))
    accept = np.zeros(config.iters, dtype=np.uint8)
    best = (-np.inf, -1, z.copy())

    report_every = max(1, config.iters // 100)
    t_start = time.perf_counter()
    r = 0
    for it in range(1, config.iters + 1):
        try:
            y, acc = gibbs_sweep(chain, y, observed, X, times, m, priors, theta_map, adapt, rng, imputer)
            accept[it - 1] = acc
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise SamplerError(it, exc) from exc

        if it > config.burnin and (it - config.burnin) % config.thin == 0 and r < n_keep:
            z, mixture, params = chain.latent.z, chain.mixture, chain.params
            log_pi = log_softmax_reduced(chain.latent.omega_field)
            ll = complete_loglik_terms(y, z, log_pi, mixture_logpdf(y, mixture), observed)
            out["xi"][r] = mixture.xi
            out["omega_cov"][r] = mixture.omega_cov
            out["beta"][r] = params.beta
            out["decays"][r] = params.decays
            out["sigma_star"][r] = params.sigma_star
            out["loglik"][r] = ll
            out["iterations"][r] = it
            pi_sum += np.exp(log_pi)
            if r % stride == 0:
                field_draws[r // stride] = chain.latent.omega_field
                z_draws[r // stride] = z
            if ll > best[0]:
                best = (ll, r, z.copy())
            r += 1
        if progress and it % report_every == 0:
            pct = 100 * it // config.iters
            print(f"[logitn-gp] {pct:3d}% iteration {it}/{config.iters} "
                  f"accept={accept[:it].mean():.3f}", file=sys.stderr, flush=True)

    return SampleStore(
        K=K, p=p, times=np.asarray(times, dtype=float),
        pi_mean=pi_sum / max(n_keep, 1),
        field_index=np.arange(0, n_keep, stride),
        omega_field=field_draws, z=z_draws,
        map_index=best[1], map_z=best[2], map_loglik=best[0],
        accept=accept, n_obs=int(observed.sum()), config=config,
        elapsed=time.perf_counter() - t_start,
        **out,
    )
