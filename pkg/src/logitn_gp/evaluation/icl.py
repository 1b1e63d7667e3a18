"""Complete-data likelihood and ICL-based choice of the number of behaviours."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..sampler.chain import SampleStore
from ..sampler.state import MixtureParams
from ..sampler.updates import mixture_logpdf

__all__ = ["complete_loglik", "n_free_params", "ICLReport", "icl", "select_model"]

log = logging.getLogger(__name__)


def complete_loglik(y, z, mixture: MixtureParams, prob_field) -> float:
    """``sum_t log N_2(y_t | xi_{z_t}, Omega_{z_t}) + log pi_{t, z_t}``.

    Labels are 0-based.  Rows where ``y`` is not finite, or whose label is
    negative, are skipped.  A zero probability at an assigned label gives
    ``-inf`` and a logged warning.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z)
    pi = np.asarray(prob_field, dtype=float)
    if y.shape[0] != z.shape[0] or pi.shape[0] != z.shape[0]:
        raise ValueError("y, z and prob_field disagree on T")
    if pi.shape[1] != mixture.K:
        raise ValueError("prob_field and mixture disagree on K")
    t = np.flatnonzero(np.isfinite(y).all(axis=1) & (z >= 0))
    zz = z[t]
    p = pi[t, zz]
    if np.any(p <= 0):
        log.warning("zero probability at an assigned label (t=%d)", int(t[np.flatnonzero(p <= 0)[0]]))
        return -math.inf
    dens = mixture_logpdf(y[t], mixture)[np.arange(len(t)), zz]
    return float(np.sum(dens + np.log(p)))


def n_free_params(K: int, p: int) -> int:
    """Mixture (5 per component), regression ``p (K-1)``, decays ``K`` and ``Sigma*``."""
    return 5 * K + p * (K - 1) + K + K * (K + 1) // 2


@dataclass(frozen=True)
class ICLReport:
    """ICL of one fitted ``(K, m)``; smaller values are better.

    ``value = (nu / 2) log T_obs - max_draw complete_loglik``, i.e. the
    negated penalized complete log-likelihood.
    """

    K: int
    m: int
    value: float
    map_index: int
    map_loglik: float
    nu: int
    n_obs: int

    def as_row(self) -> dict:
        return {"K": self.K, "m": self.m, "icl": self.value, "map_index": self.map_index,
                "map_loglik": self.map_loglik, "nu": self.nu, "n_obs": self.n_obs}


def icl(store: SampleStore, m: int | None = None) -> ICLReport:
    """ICL from the retained draw with the highest complete log-likelihood."""
    if store.n == 0:
        raise ValueError("empty sample store")
    idx = int(np.argmax(store.loglik))
    best = float(store.loglik[idx])
    nu = n_free_params(store.K, store.p)
    value = 0.5 * nu * math.log(store.n_obs) - best
    return ICLReport(store.K, store.config.m if m is None else m, value, idx, best, nu, store.n_obs)


def select_model(reports) -> ICLReport:
    """Entry with the smallest finite ICL."""
    ok = [r for r in reports if r is not None and math.isfinite(r.value)]
    if not ok:
        raise ValueError("no finite ICL to select from")
    return min(ok, key=lambda r: (r.value, r.K, r.m))
