"""Command line: ``logitn-gp simulate|fit|select|summarize``.

Exit status is 0 on success, 2 when the configuration or the inputs are
invalid (nothing is written in that case) and 1 when a run fails.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from datetime import timedelta
from pathlib import Path

import numpy as np

from . import __version__
from ._io import read_table, sha256, write_json, write_table
from .config import ConfigError, RunConfig, dump_config, load_config, validate
from .evaluation.icl import icl, select_model
from .evaluation.reports import write_densities, write_logratio, write_prob_timeseries
from .evaluation.simulate import linear_time_design, simulate_dataset, window_design
from .evaluation.summaries import logratio_report, predictive_densities, probability_timeseries, relabel
from .sampler.chain import SamplerError, run_chain
from .sampler.state import MovementData
from .trajectory import TrackFormatError, parse_track, regularize

__all__ = ["main", "cmd_simulate", "cmd_fit", "cmd_select", "cmd_summarize",
           "load_data", "build_design"]

log = logging.getLogger("logitn_gp")

DATA_COLUMNS = ["grid_index", "time", "y1", "y2", "step_length", "turning_angle", "observed"]


class InputError(ValueError):
    """Unreadable or inconsistent input data."""


# ---------------------------------------------------------------------------
# inputs


def _float_or_nan(text: str) -> float:
    return float(text) if text.strip() else math.nan


def read_increments(path) -> tuple[MovementData, np.ndarray]:
    """Load the ``data.csv`` layout written by ``simulate``."""
    header, rows = read_table(path)
    if header != DATA_COLUMNS:
        raise InputError(f"{path}: expected columns {DATA_COLUMNS}, got {header}")
    if not rows:
        raise InputError(f"{path}: no rows")
    try:
        idx = np.array([int(r[0]) for r in rows])
        times = np.array([float(r[1]) for r in rows])
        y = np.array([[_float_or_nan(r[2]), _float_or_nan(r[3])] for r in rows])
        obs = np.array([int(r[6]) for r in rows], dtype=bool)
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: {exc}") from None
    y[~obs] = np.nan
    if np.any(~np.isfinite(y[obs])):
        raise InputError(f"{path}: observed rows need finite y1, y2")
    return MovementData(y, times), idx


def load_data(cfg: RunConfig) -> tuple[MovementData, np.ndarray]:
    """Movement data and the grid index of each increment."""
    d = cfg.data
    if d.format == "increments":
        return read_increments(d.path)
    track = parse_track(d.path)
    grid = regularize(track, step=timedelta(minutes=d.step_minutes),
                      snap_tol=timedelta(minutes=d.snap_minutes))
    if grid.T < 3:
        raise InputError("fewer than three grid slots")
    times = grid.times(unit=timedelta(hours=d.time_unit_hours))
    data = MovementData.from_grid(grid, times)
    return data, np.arange(1, grid.T - 1)


def build_design(cfg: RunConfig, data: MovementData, grid_index: np.ndarray) -> np.ndarray:
    g = cfg.design
    t = data.times
    if g.kind == "linear_time":
        scale = g.time_scale if g.time_scale is not None else float(np.max(np.abs(t)))
        return linear_time_design(t / (scale if scale > 0 else 1.0))
    if g.kind == "intercept":
        return np.ones((data.n, 1))
    if g.kind == "windows":
        return window_design(t, [(float(a), float(b)) for a, b in g.windows])
    header, rows = read_table(g.covariate_path)
    if not header or header[0] != "grid_index" or len(header) < 2:
        raise InputError(f"{g.covariate_path}: first column must be grid_index")
    try:
        table = {int(r[0]): [float(v) for v in r[1:]] for r in rows}
    except ValueError as exc:
        raise InputError(f"{g.covariate_path}: {exc}") from None
    missing = [int(i) for i in grid_index if int(i) not in table]
    if missing:
        raise InputError(f"{g.covariate_path}: no covariates for grid index {missing[0]}")
    X = np.array([table[int(i)] for i in grid_index])
    if not np.all(np.isfinite(X)):
        raise InputError(f"{g.covariate_path}: non-finite covariate")
    return X


# ---------------------------------------------------------------------------
# outputs


def _prepare_out(out, force: bool) -> Path:
    if out is None:
        raise ConfigError("no output directory (use --out or set 'out' in the config)")
    out = Path(out)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"{out} is not empty; use --force to overwrite")
    return out


def _checksums(out: Path, names) -> dict:
    return {n: sha256(out / n) for n in names}


def _write_manifest(out: Path, command: str, cfg: RunConfig, files, extra: dict) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "files": _checksums(out, files),
        **extra,
    }
    write_json(out / "manifest.json", manifest)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, out: Path) -> list[str]:
    """Simulate one dataset; writes ``data.csv``, ``truth.json`` and a manifest."""
    scenario = cfg.scenario()
    rng = np.random.default_rng(cfg.seed)
    data, truth = simulate_dataset(scenario, rng)
    out.mkdir(parents=True, exist_ok=True)
    y = truth.y_full
    rows = []
    for i in range(scenario.T):
        ok = bool(truth.observed[i])
        y1, y2 = (y[i] if ok else (math.nan, math.nan))
        r = math.hypot(y1, y2)
        th = math.atan2(y2, y1) % (2 * math.pi) if ok else math.nan
        rows.append([i + 1, truth.times[i], y1, y2, r, th, int(ok)])
    with open(out / "data.csv", "w", newline="") as fh:
        fh.write(",".join(DATA_COLUMNS) + "\n")
        for row in rows:
            cells = [str(row[0])] + ["" if not math.isfinite(v) else format(v, ".17g") for v in row[1:6]]
            fh.write(",".join(cells + [str(row[6])]) + "\n")
    write_json(out / "truth.json", truth.to_dict())
    files = ["data.csv", "truth.json"]
    _write_manifest(out, "simulate", cfg, files, {})
    return files + ["manifest.json"]


def _fit_one(cfg: RunConfig, data, X, K=None, m=None, seed=None, progress=False):
    cc = cfg.chain_config(K=K, m=m, seed=seed)
    return run_chain(data, X, cc, cfg.priors_obj(), progress=progress)


def _write_reports(cfg: RunConfig, store, out: Path) -> list[str]:
    r = cfg.reports
    rel, _ = relabel(store)
    store.write_csv(out / "samples.csv")
    rel.write_csv(out / "samples_relabeled.csv")
    write_prob_timeseries(out / "prob_timeseries.csv", probability_timeseries(rel, r.quantiles), rel.times)
    if r.r_max is None:
        speeds = np.hypot(rel.xi[..., 0], rel.xi[..., 1]) + 4 * np.sqrt(
            np.trace(rel.omega_cov, axis1=-2, axis2=-1))
        r_max = float(np.max(speeds))
    else:
        r_max = float(r.r_max)
    dens = predictive_densities(
        rel, np.linspace(0.0, r_max, r.r_points), np.linspace(0.0, 2 * np.pi, r.theta_points),
        mc_draws=r.mc_draws, rng=np.random.default_rng([cfg.seed, 1]), max_draws=r.max_draws)
    write_densities(out, dens)
    write_logratio(out / "logratio_curves.csv",
                   logratio_report(rel, np.linspace(0.0, r.lag_max, r.lag_points)))
    return ["samples.csv", "samples_relabeled.csv", "prob_timeseries.csv",
            "angle_density.csv", "step_density.csv", "logratio_curves.csv"]


def cmd_fit(cfg: RunConfig, out: Path, progress: bool = True) -> list[str]:
    """Run one chain and write draws, reports and the manifest."""
    data, grid_index = load_data(cfg)
    X = build_design(cfg, data, grid_index)
    out.mkdir(parents=True, exist_ok=True)
    store = _fit_one(cfg, data, X, progress=progress)
    files = _write_reports(cfg, store, out)
    rep = icl(store)
    write_json(out / "icl.json", rep.as_row())
    files.append("icl.json")
    write_json(out / "index.json", {"run_id": out.name, "reports": {
        "samples": "samples.csv", "samples_relabeled": "samples_relabeled.csv",
        "prob_timeseries": "prob_timeseries.csv", "angle_density": "angle_density.csv",
        "step_density": "step_density.csv", "logratio_curves": "logratio_curves.csv",
        "icl": "icl.json"}})
    files.append("index.json")
    iters = store.config.iters
    _write_manifest(out, "fit", cfg, files, {
        "acceptance_rate": store.acceptance_rate(),
        "acceptance_trace": store.acceptance_trace(max(1, iters // 100)).tolist(),
        "n_retained": store.n,
        "timing": {"elapsed_seconds": store.elapsed,
                   "ms_per_iteration": 1e3 * store.elapsed / iters,
                   "minutes_per_1000_retained": store.elapsed / 60 / max(store.n, 1) * 1000},
    })
    return files + ["manifest.json"]


def cmd_select(cfg: RunConfig, out: Path, progress: bool = False) -> list[str]:
    """Fit every ``(K, m)`` cell and write ``icl_table.csv``.

    Cell ``i`` (row-major over ``K_list`` x ``m_list``) runs with seed
    ``seed + i``.  Failed cells are kept in the table with status ``failed``.
    """
    data, grid_index = load_data(cfg)
    X = build_design(cfg, data, grid_index)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(int(K), int(m)) for K in cfg.select.K_list for m in cfg.select.m_list]
    reports, status = [], []
    t0 = time.perf_counter()
    for i, (K, m) in enumerate(cells):
        try:
            store = _fit_one(cfg, data, X, K=K, m=m, seed=cfg.seed + i, progress=progress)
            reports.append(icl(store, m=m))
            status.append("ok")
        except (SamplerError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("cell K=%d m=%d failed: %s", K, m, exc)
            reports.append(None)
            status.append(f"failed: {exc}")
    best = None
    try:
        best = select_model(reports)
    except ValueError:
        pass
    rows = []
    for (K, m), rep, st in zip(cells, reports, status):
        if rep is None:
            rows.append([K, m, math.nan, math.nan, math.nan, "", "", 0, st])
        else:
            rows.append([K, m, rep.value, rep.map_loglik, rep.nu, rep.n_obs, rep.map_index,
                         int(rep is best), st])
    write_table(out / "icl_table.csv",
                ["K", "m", "icl", "map_loglik", "nu", "n_obs", "map_index", "selected", "status"], rows)
    files = ["icl_table.csv"]
    write_json(out / "index.json", {"run_id": out.name, "reports": {"icl_table": "icl_table.csv"}})
    files.append("index.json")
    _write_manifest(out, "select", cfg, files, {
        "selected": None if best is None else {"K": best.K, "m": best.m, "icl": best.value},
        "timing": {"elapsed_seconds": time.perf_counter() - t0},
    })
    return files + ["manifest.json"]


def cmd_summarize(run_dir, stream=None) -> str:
    """Posterior means and 95% intervals, one row per parameter."""
    stream = sys.stdout if stream is None else stream
    run_dir = Path(run_dir)
    if not (run_dir / "manifest.json").is_file():
        raise InputError(f"{run_dir}: missing manifest.json")
    source = run_dir / "samples_relabeled.csv"
    if not source.is_file():
        source = run_dir / "samples.csv"
    if not source.is_file():
        raise InputError(f"{run_dir}: no samples to summarize")
    header, rows = read_table(source)
    draws = np.array([[float(v) for v in r] for r in rows]).reshape(-1, len(header))
    if draws.shape[0] == 0:
        raise InputError(f"{source}: no draws")
    lines = [f"{'parameter':<14}{'mean':>14}{'2.5%':>14}{'97.5%':>14}"]
    for j, name in enumerate(header):
        if name == "loglik":
            continue
        col = draws[:, j]
        lo, hi = np.quantile(col, [0.025, 0.975])
        lines.append(f"{name:<14}{col.mean():>14.4f}{lo:>14.4f}{hi:>14.4f}")
    text = "\n".join(lines) + "\n"
    stream.write(text)
    return text


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logitn-gp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["simulate", "fit", "select", "summarize"])
    p.add_argument("run_dir", nargs="?", help="run directory (summarize only)")
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p.add_argument("--quiet", action="store_true", help="no progress output")
    p.add_argument("--dump-config", action="store_true",
                   help="print the resolved configuration and exit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        if args.dump_config:
            sys.stdout.write(dump_config(cfg))
            return 0
        if args.command == "summarize":
            cmd_summarize(args.run_dir or cfg.out)
            return 0
        validate(cfg, args.command)
        out = _prepare_out(cfg.out, args.force)
        if args.command == "simulate":
            cmd_simulate(cfg, out)
        elif args.command == "fit":
            cmd_fit(cfg, out, progress=not args.quiet)
        else:
            cmd_select(cfg, out, progress=False)
    except (ConfigError, InputError, TrackFormatError) as exc:
        print(f"logitn-gp: error: {exc}", file=sys.stderr)
        return 2
    except SamplerError as exc:
        print(f"logitn-gp: run failed: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"logitn-gp: run failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
