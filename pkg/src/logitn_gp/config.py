"""Run configuration: YAML file <-> nested dataclasses.

Every section has defaults, so an empty file is a valid configuration that
reproduces the three-behaviour simulation benchmark.  ``to_dict`` and
``from_dict`` are exact inverses, and all validation happens in
:func:`validate` before any computation or file output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .evaluation.simulate import SimScenario
from .sampler.state import ChainConfig, Priors

__all__ = [
    "ConfigError",
    "DataSpec",
    "DesignSpec",
    "ChainSpec",
    "PriorSpec",
    "SimSpec",
    "SelectSpec",
    "ReportSpec",
    "RunConfig",
    "load_config",
    "dump_config",
]


class ConfigError(ValueError):
    """Invalid configuration; reported before any work starts."""


@dataclass
class DataSpec:
    """Input data.

    ``format`` is ``increments`` (the CSV written by ``simulate``) or
    ``track`` (``timestamp,x,y`` records, regularized onto a grid).
    """

    path: str | None = None
    format: str = "increments"
    step_minutes: float = 30.0
    snap_minutes: float = 1.0
    time_unit_hours: float = 24.0


@dataclass
class DesignSpec:
    """Covariates of the log-ratio mean.

    ``linear_time``: ``(1, t / time_scale)``, with ``time_scale`` defaulting
    to the last increment time.  ``windows``: one dummy per ``[start, end]``
    window, zero elsewhere.  ``intercept``: a column of ones.  ``custom``:
    columns of ``covariate_path`` keyed by ``grid_index``.
    """

    kind: str = "linear_time"
    time_scale: float | None = None
    windows: list = field(default_factory=list)
    covariate_path: str | None = None


@dataclass
class ChainSpec:
    K: int = 3
    m: int = 10
    iters: int = 1_000_000
    burnin: int = 70_000
    thin: int = 6
    adapt_target: float = 0.234
    adapt_decay: float = 0.6


@dataclass
class PriorSpec:
    xi_mean: list = field(default_factory=lambda: [0.0, 0.0])
    xi_cov: list = field(default_factory=lambda: [[100.0, 0.0], [0.0, 100.0]])
    omega_iw_df: float = 3.0
    omega_iw_scale: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    decay_lower: float = 0.3
    decay_upper: float = 6.0
    beta_mean: float = 0.0
    beta_var: float = 100.0
    sigma_star_iw_df: float | None = None
    sigma_star_iw_scale: list | None = None


@dataclass
class SimSpec:
    T: int = 500
    xi: list = field(default_factory=lambda: [[0.0, 0.0], [3.0, 0.0], [0.0, -3.0]])
    omega_cov: list = field(default_factory=lambda: [
        [[1.0, 0.0], [0.0, 3.0]], [[1.0, 1.272], [1.272, 2.0]], [[2.0, -0.5], [-0.5, 0.5]]])
    sigma_star: list = field(default_factory=lambda: [[5.0, -2.0, 0.0], [-2.0, 5.0, 3.0], [0.0, 3.0, 5.0]])
    decays: list = field(default_factory=lambda: [1.0, 0.8, 1.5])
    beta: list = field(default_factory=lambda: [0.0, -5.0, 3.0, -7.0])
    span: float = 20.0
    design: str = "linear_time"
    time_covariate: str = "unit"
    missing_fraction: float = 0.0


@dataclass
class SelectSpec:
    K_list: list = field(default_factory=lambda: [2, 3, 4])
    m_list: list = field(default_factory=lambda: [10])


@dataclass
class ReportSpec:
    quantiles: list = field(default_factory=lambda: [0.025, 0.975])
    r_max: float | None = None
    r_points: int = 200
    theta_points: int = 720
    mc_draws: int = 200
    max_draws: int = 500
    lag_max: float = 12.0
    lag_points: int = 61


_SECTIONS = {
    "data": DataSpec,
    "design": DesignSpec,
    "chain": ChainSpec,
    "priors": PriorSpec,
    "simulate": SimSpec,
    "select": SelectSpec,
    "reports": ReportSpec,
}


@dataclass
class RunConfig:
    seed: int = 0
    out: str | None = None
    data: DataSpec = field(default_factory=DataSpec)
    design: DesignSpec = field(default_factory=DesignSpec)
    chain: ChainSpec = field(default_factory=ChainSpec)
    priors: PriorSpec = field(default_factory=PriorSpec)
    simulate: SimSpec = field(default_factory=SimSpec)
    select: SelectSpec = field(default_factory=SelectSpec)
    reports: ReportSpec = field(default_factory=ReportSpec)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = {} if d is None else d
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        kwargs = {}
        for name, value in d.items():
            if name in _SECTIONS:
                kwargs[name] = _section(_SECTIONS[name], value, name)
            else:
                kwargs[name] = value
        return cls(**kwargs)

    # typed views -----------------------------------------------------------

    def chain_config(self, K: int | None = None, m: int | None = None, seed: int | None = None) -> ChainConfig:
        c = self.chain
        return ChainConfig(K=c.K if K is None else K, m=c.m if m is None else m, iters=c.iters,
                           burnin=c.burnin, thin=c.thin, seed=self.seed if seed is None else seed,
                           adapt_target=c.adapt_target, adapt_decay=c.adapt_decay)

    def priors_obj(self) -> Priors:
        p = self.priors
        return Priors(
            xi_mean=np.array(p.xi_mean, dtype=float), xi_cov=np.array(p.xi_cov, dtype=float),
            omega_iw_df=float(p.omega_iw_df), omega_iw_scale=np.array(p.omega_iw_scale, dtype=float),
            decay_lower=float(p.decay_lower), decay_upper=float(p.decay_upper),
            beta_mean=float(p.beta_mean), beta_var=float(p.beta_var),
            sigma_star_iw_df=None if p.sigma_star_iw_df is None else float(p.sigma_star_iw_df),
            sigma_star_iw_scale=None if p.sigma_star_iw_scale is None else np.array(p.sigma_star_iw_scale, dtype=float),
        )

    def scenario(self) -> SimScenario:
        s = self.simulate
        return SimScenario(T=int(s.T), xi=s.xi, omega_cov=s.omega_cov, sigma_star=s.sigma_star,
                           decays=s.decays, beta=s.beta, span=float(s.span), design=s.design,
                           time_covariate=s.time_covariate, missing_fraction=float(s.missing_fraction))


def _section(cls, value, name):
    if value is None:
        return cls()
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(value) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return cls(**value)


def validate(cfg: RunConfig, command: str) -> None:
    """Raise :class:`ConfigError` on any invariant violation relevant to ``command``."""
    try:
        if not isinstance(cfg.seed, int) or cfg.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        cfg.chain_config()
        if command in ("simulate",):
            cfg.scenario()
        if command in ("fit", "select"):
            Ks = [cfg.chain.K] if command == "fit" else list(cfg.select.K_list)
            ms = [cfg.chain.m] if command == "fit" else list(cfg.select.m_list)
            if not Ks or not ms:
                raise ConfigError("K_list and m_list must be nonempty")
            for K in Ks:
                for m in ms:
                    cfg.chain_config(K=int(K), m=int(m))
                    cfg.priors_obj().sigma_star_df(int(K))
                    cfg.priors_obj().sigma_star_scale(int(K))
            d = cfg.data
            if d.path is None:
                raise ConfigError("data.path is required")
            if not Path(d.path).is_file():
                raise ConfigError(f"data file not readable: {d.path}")
            if d.format not in ("increments", "track"):
                raise ConfigError(f"unknown data.format {d.format!r}")
            if not (d.step_minutes > 0 and d.snap_minutes >= 0 and d.time_unit_hours > 0):
                raise ConfigError("data step, snap tolerance and time unit must be positive")
            g = cfg.design
            if g.kind not in ("linear_time", "windows", "intercept", "custom"):
                raise ConfigError(f"unknown design.kind {g.kind!r}")
            if g.kind == "windows":
                if not g.windows:
                    raise ConfigError("design.windows must list [start, end] pairs")
                for w in g.windows:
                    if len(w) != 2 or not float(w[0]) <= float(w[1]):
                        raise ConfigError(f"bad window {w!r}")
            if g.kind == "custom" and (g.covariate_path is None or not Path(g.covariate_path).is_file()):
                raise ConfigError("design.covariate_path must name a readable file")
            if g.time_scale is not None and not g.time_scale > 0:
                raise ConfigError("design.time_scale must be positive")
            r = cfg.reports
            if any(not 0 <= q <= 1 for q in r.quantiles):
                raise ConfigError("report quantiles must lie in [0, 1]")
            if r.r_points < 2 or r.theta_points < 2 or r.lag_points < 1 or r.mc_draws < 1 or r.max_draws < 1:
                raise ConfigError("report grid sizes must be positive")
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from None
    try:
        return RunConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: RunConfig, path=None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
    if path is not None:
        Path(path).write_text(text)
    return text
