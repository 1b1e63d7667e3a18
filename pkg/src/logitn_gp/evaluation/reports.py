"""Writers for the posterior reports."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .._io import write_table
from .summaries import LogratioReport, PredictiveDensities, ProbSummary

__all__ = ["write_prob_timeseries", "write_densities", "write_logratio"]


def write_prob_timeseries(path, summary: ProbSummary, times) -> None:
    cols, table = summary.table(times)
    write_table(path, cols, table)


def write_densities(out_dir, dens: PredictiveDensities) -> tuple[Path, Path]:
    """``angle_density.csv`` and ``step_density.csv`` with one column per behaviour."""
    out_dir = Path(out_dir)
    K = dens.angle.shape[0]
    angle_path = out_dir / "angle_density.csv"
    step_path = out_dir / "step_density.csv"
    write_table(angle_path, ["theta"] + [f"density.{k + 1}" for k in range(K)],
                np.column_stack([dens.grid_theta, dens.angle.T]))
    write_table(step_path, ["r"] + [f"density.{k + 1}" for k in range(K)],
                np.column_stack([dens.grid_r, dens.step.T]))
    return angle_path, step_path


def write_logratio(path, rep: LogratioReport) -> None:
    cols = ["lag"]
    parts = [rep.lags[:, None]]
    for c, (i, j, k, l) in enumerate(rep.pairs):
        tag = f"rho.{i}{j}.{k}{l}"
        cols += [f"{tag}.mean", f"{tag}.lower", f"{tag}.upper"]
        parts += [rep.mean[c][:, None], rep.lower[c][:, None], rep.upper[c][:, None]]
    write_table(path, cols, np.concatenate(parts, axis=1))
