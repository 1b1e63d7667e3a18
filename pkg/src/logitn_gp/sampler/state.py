"""Containers for the data, parameters and configuration of one chain."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..trajectory import TrackGrid, decompose_coords

__all__ = [
    "MovementData",
    "MixtureParams",
    "LatentState",
    "Priors",
    "ChainConfig",
]


@dataclass
class MovementData:
    """Increments ``y`` at times ``times``, optionally backed by coordinates.

    When ``coords`` is given (shape ``(n + 2, 2)``, NaN where unobserved) the
    sampler imputes the missing coordinates and recomputes ``y`` from them.
    Without coordinates, missing increments simply carry no likelihood.
    """

    y: np.ndarray
    times: np.ndarray
    coords: np.ndarray | None = None
    y_observed: np.ndarray = field(init=False)
    coord_observed: np.ndarray | None = field(init=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(-1, 2)
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        if len(self.times) != len(self.y):
            raise ValueError("y and times differ in length")
        if len(self.y) < 1:
            raise ValueError("no increments")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=float)
            if self.coords.shape != (len(self.y) + 2, 2):
                raise ValueError("coords must have two more rows than y")
            self.coord_observed = np.isfinite(self.coords).all(axis=1)
            if not self.coord_observed.any():
                raise ValueError("no observed coordinate")
        else:
            self.coord_observed = None
        self.y_observed = np.isfinite(self.y).all(axis=1)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def n_obs(self) -> int:
        return int(self.y_observed.sum())

    @property
    def has_missing_coords(self) -> bool:
        return self.coord_observed is not None and not self.coord_observed.all()

    @classmethod
    def from_grid(cls, grid: TrackGrid, times=None) -> "MovementData":
        """Increments of a gridded track, timed at the slot where each starts."""
        y, _ = decompose_coords(grid.coords)
        if times is None:
            times = grid.times()
        times = np.asarray(times, dtype=float)
        return cls(y, times[1:-1], grid.coords)

    @classmethod
    def from_coords(cls, coords, times) -> "MovementData":
        coords = np.asarray(coords, dtype=float)
        y, _ = decompose_coords(coords)
        return cls(y, np.asarray(times, dtype=float)[1:-1], coords)


def _check_spd(mats: np.ndarray, what: str) -> None:
    if not np.allclose(mats, np.swapaxes(mats, -1, -2), rtol=1e-10, atol=1e-12):
        raise ValueError(f"{what} must be symmetric")
    try:
        np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        raise ValueError(f"{what} must be positive definite") from None


@dataclass
class MixtureParams:
    """Component means ``xi`` ``(K, 2)`` and covariances ``omega_cov`` ``(K, 2, 2)``."""

    xi: np.ndarray
    omega_cov: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float).reshape(-1, 2)
        self.omega_cov = np.asarray(self.omega_cov, dtype=float).reshape(-1, 2, 2)
        if len(self.xi) != len(self.omega_cov):
            raise ValueError("xi and omega_cov disagree on K")
        _check_spd(self.omega_cov, "omega_cov")

    @property
    def K(self) -> int:
        return len(self.xi)

    def permuted(self, perm) -> "MixtureParams":
        perm = np.asarray(perm)
        return MixtureParams(self.xi[perm], self.omega_cov[perm])


@dataclass
class LatentState:
    """Per-time latent quantities: labels, log-ratio field and PG auxiliaries."""

    z: np.ndarray
    omega_field: np.ndarray
    pg_aux: np.ndarray
    missing_coords: np.ndarray | None = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int64)
        self.omega_field = np.asarray(self.omega_field, dtype=float)
        self.pg_aux = np.asarray(self.pg_aux, dtype=float)
        if np.any(self.pg_aux <= 0):
            raise ValueError("Polya-Gamma auxiliaries must be positive")
        K = self.omega_field.shape[1] + 1
        if np.any(self.z >= K) or np.any(self.z < -1):
            raise ValueError("labels out of range")


@dataclass
class Priors:
    """Prior hyperparameters.

    ``sigma_star_iw_df`` and ``sigma_star_iw_scale`` default to ``K + 1`` and
    ``I_K`` once ``K`` is known; ``beta_var`` is a common prior variance.
    """

    xi_mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    xi_cov: np.ndarray = field(default_factory=lambda: 100.0 * np.eye(2))
    omega_iw_df: float = 3.0
    omega_iw_scale: np.ndarray = field(default_factory=lambda: np.eye(2))
    decay_lower: float = 0.3
    decay_upper: float = 6.0
    beta_mean: float = 0.0
    beta_var: float = 100.0
    sigma_star_iw_df: float | None = None
    sigma_star_iw_scale: np.ndarray | None = None

    def __post_init__(self):
        self.xi_mean = np.asarray(self.xi_mean, dtype=float).reshape(2)
        self.xi_cov = np.asarray(self.xi_cov, dtype=float).reshape(2, 2)
        self.omega_iw_scale = np.asarray(self.omega_iw_scale, dtype=float).reshape(2, 2)
        _check_spd(self.xi_cov, "xi_cov")
        _check_spd(self.omega_iw_scale, "omega_iw_scale")
        if not self.omega_iw_df > 1:
            raise ValueError("omega_iw_df must exceed dimension - 1 = 1")
        if not 0 < self.decay_lower < self.decay_upper:
            raise ValueError("need 0 < decay_lower < decay_upper")
        if not self.beta_var > 0:
            raise ValueError("beta_var must be positive")
        if self.sigma_star_iw_scale is not None:
            self.sigma_star_iw_scale = np.asarray(self.sigma_star_iw_scale, dtype=float)
            _check_spd(self.sigma_star_iw_scale, "sigma_star_iw_scale")

    def sigma_star_df(self, K: int) -> float:
        df = K + 1.0 if self.sigma_star_iw_df is None else float(self.sigma_star_iw_df)
        if not df > K - 1:
            raise ValueError("sigma_star_iw_df must exceed K - 1")
        return df

    def sigma_star_scale(self, K: int) -> np.ndarray:
        if self.sigma_star_iw_scale is None:
            return np.eye(K)
        if self.sigma_star_iw_scale.shape != (K, K):
            raise ValueError(f"sigma_star_iw_scale must be {K}x{K}")
        return self.sigma_star_iw_scale


@dataclass
class ChainConfig:
    K: int
    m: int = 10
    iters: int = 1_000_000
    burnin: int = 70_000
    thin: int = 6
    seed: int = 0
    adapt_target: float = 0.234
    adapt_decay: float = 0.6

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if not 0 <= self.burnin < self.iters:
            raise ValueError("need 0 <= burnin < iters")
        if not 0 < self.adapt_target < 1:
            raise ValueError("adapt_target must lie in (0, 1)")
        if not 0.5 < self.adapt_decay <= 1:
            raise ValueError("adapt_decay must lie in (0.5, 1]")

    @property
    def n_retained(self) -> int:
        return (self.iters - self.burnin) // self.thin
