"""GPS track ingestion, time-grid regularization and rotated increments.

A track ``s_1, ..., s_T`` on a regular grid is described equivalently by its
first two points and the increments

    y_i = R(b_i)^{-1} (s_{i+2} - s_{i+1}),    b_i = atan2(s_{i+1} - s_i),

i.e. each displacement expressed in the frame of the previous heading.  The
step-length is ``||y_i||`` and the turning-angle ``atan2(y_i2, y_i1)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

__all__ = [
    "TrackFormatError",
    "RawTrack",
    "TrackGrid",
    "Increments",
    "parse_track",
    "regularize",
    "rotation_matrix",
    "decompose",
    "decompose_coords",
    "reconstruct",
    "write_increments_csv",
]

TWO_PI = 2.0 * math.pi


class TrackFormatError(ValueError):
    """Raised for malformed track files or tracks violating their invariants."""


@dataclass(frozen=True)
class RawTrack:
    """Timestamped fixes sorted by time.

    Attributes
    ----------
    times : tuple of datetime
        UTC timestamps, strictly increasing.
    xy : ndarray, shape (n, 2)
        Planar coordinates in the units of the source file.
    """

    times: tuple
    xy: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.xy):
            raise TrackFormatError("times and coordinates differ in length")
        if len(self.times) < 3:
            raise TrackFormatError("a track needs at least 3 records")
        for a, b in zip(self.times, self.times[1:]):
            if b <= a:
                raise TrackFormatError(f"timestamps not strictly increasing at {b.isoformat()}")

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class TrackGrid:
    """Coordinates on the grid ``t0 + i * step`` with explicit gaps.

    Missing slots hold NaN in ``coords`` and False in ``observed_mask``.
    ``dropped`` counts raw records that fell outside every snap window.
    """

    t0: datetime
    step: timedelta
    coords: np.ndarray
    observed_mask: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        mask = np.asarray(self.observed_mask, dtype=bool)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise TrackFormatError("coords must have shape (T, 2)")
        if len(coords) < 3:
            raise TrackFormatError("a grid needs T >= 3")
        if mask.shape != (len(coords),):
            raise TrackFormatError("observed_mask must have length T")
        if np.any(np.isfinite(coords).all(axis=1) != mask):
            raise TrackFormatError("coords present exactly where observed_mask is true")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "observed_mask", mask)

    @property
    def T(self) -> int:
        return len(self.coords)

    @property
    def n_missing(self) -> int:
        return int((~self.observed_mask).sum())

    def time_of(self, i: int) -> datetime:
        return self.t0 + i * self.step

    def times(self, unit: timedelta = timedelta(days=1)) -> np.ndarray:
        """Grid times as floats measured in ``unit`` from ``t0``."""
        return np.arange(self.T) * (self.step / unit)


@dataclass(frozen=True)
class Increments:
    """Rotated increments of a gridded track.

    ``y[i]`` uses coordinates ``i, i+1, i+2``; ``bearings[i]`` is the heading
    of the displacement from ``i`` to ``i+1``.  Missing entries are NaN.
    """

    y: np.ndarray
    bearings: np.ndarray
    observed: np.ndarray = field(init=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "bearings", np.asarray(self.bearings, dtype=float))
        object.__setattr__(self, "observed", np.isfinite(y).all(axis=1))

    def __len__(self):
        return len(self.y)

    @property
    def step_length(self) -> np.ndarray:
        return np.hypot(self.y[:, 0], self.y[:, 1])

    @property
    def turning_angle(self) -> np.ndarray:
        return np.mod(np.arctan2(self.y[:, 1], self.y[:, 0]), TWO_PI)


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_track(path, format: str = "csv") -> RawTrack:
    """Read a ``timestamp,x,y`` CSV file into a sorted :class:`RawTrack`.

    Rows may come in any order.  Unparseable rows raise
    :class:`TrackFormatError` naming the offending line, as do duplicate
    timestamps.
    """
    if format != "csv":
        raise ValueError(f"unsupported track format {format!r}")
    path = Path(path)
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "x", "y"]:
            raise TrackFormatError(f"{path}: expected header 'timestamp,x,y', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise TrackFormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                ts = _parse_timestamp(row[0])
                x, y = float(row[1]), float(row[2])
            except ValueError as exc:
                raise TrackFormatError(f"{path}:{lineno}: {exc}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise TrackFormatError(f"{path}:{lineno}: non-finite coordinate")
            records.append((ts, x, y, lineno))
    records.sort(key=lambda r: r[0])
    for prev, cur in zip(records, records[1:]):
        if prev[0] == cur[0]:
            raise TrackFormatError(
                f"{path}:{cur[3]}: duplicate timestamp {cur[0].isoformat()} (also line {prev[3]})"
            )
    times = tuple(r[0] for r in records)
    xy = np.array([[r[1], r[2]] for r in records], dtype=float).reshape(-1, 2)
    return RawTrack(times, xy)


def regularize(
    track: RawTrack,
    t0: datetime | None = None,
    step: timedelta = timedelta(minutes=30),
    snap_tol: timedelta = timedelta(minutes=1),
) -> TrackGrid:
    """Snap fixes onto the grid ``t0 + i * step``.

    Each record goes to the nearest grid slot if it lies within ``snap_tol``
    of it, otherwise it is dropped and counted in ``TrackGrid.dropped``.  The
    grid runs from ``t0`` (default: the first record) to the last snapped
    record.
    """
    if step <= timedelta(0):
        raise ValueError("step must be positive")
    if not snap_tol < step / 2:
        raise ValueError("snap_tol must be smaller than step / 2")
    if t0 is None:
        t0 = track.times[0]
    elif t0.tzinfo is None:
        t0 = t0.replace(tzinfo=timezone.utc)

    slots: dict[int, int] = {}
    dropped = 0
    for rec, ts in enumerate(track.times):
        offset = (ts - t0) / step
        idx = int(round(offset))
        if idx < 0 or abs(ts - (t0 + idx * step)) > snap_tol:
            dropped += 1
            continue
        if idx in slots:
            other = track.times[slots[idx]]
            raise TrackFormatError(
                f"records {other.isoformat()} and {ts.isoformat()} snap to grid index {idx}"
            )
        slots[idx] = rec
    if not slots:
        raise TrackFormatError("no record falls within a snap window")
    T = max(slots) + 1
    coords = np.full((T, 2), np.nan)
    for idx, rec in slots.items():
        coords[idx] = track.xy[rec]
    return TrackGrid(t0, step, coords, np.isfinite(coords).all(axis=1), dropped)


def rotation_matrix(bearing: float) -> np.ndarray:
    """Counterclockwise rotation by ``bearing`` radians."""
    c, s = math.cos(bearing), math.sin(bearing)
    return np.array([[c, -s], [s, c]])


def decompose_coords(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bearings and rotated increments of a ``(T, 2)`` coordinate array.

    NaN coordinates propagate to every bearing and increment that uses them.
    Returns ``(y, bearings)`` with shapes ``(T-2, 2)`` and ``(T-1,)``.
    """
    coords = np.asarray(coords, dtype=float)
    disp = np.diff(coords, axis=0)
    bearings = np.arctan2(disp[:, 1], disp[:, 0])
    c, s = np.cos(bearings[:-1]), np.sin(bearings[:-1])
    nxt = disp[1:]
    # R(b)^{-1} = R(b)' applied to the next displacement
    y = np.column_stack([c * nxt[:, 0] + s * nxt[:, 1], -s * nxt[:, 0] + c * nxt[:, 1]])
    return y, np.mod(bearings, TWO_PI)


def decompose(grid: TrackGrid) -> Increments:
    """Rotated increments of a gridded track; gaps yield NaN increments."""
    y, bearings = decompose_coords(grid.coords)
    return Increments(y, bearings)


def reconstruct(start, incr) -> np.ndarray:
    """Rebuild coordinates from the first two points and the increments.

    ``incr`` is an :class:`Increments` or a ``(n, 2)`` array; the result has
    ``n + 2`` rows.  Raises ``ValueError`` on a missing increment.
    """
    y = incr.y if isinstance(incr, Increments) else np.asarray(incr, dtype=float)
    y = y.reshape(-1, 2)
    if not np.isfinite(y).all():
        bad = int(np.flatnonzero(~np.isfinite(y).all(axis=1))[0])
        raise ValueError(f"missing increment at index {bad}")
    start = np.asarray(start, dtype=float).reshape(2, 2)
    out = np.empty((len(y) + 2, 2))
    out[:2] = start
    dx, dy = out[1] - out[0]
    for i, (u, v) in enumerate(y):
        b = math.atan2(dy, dx)
        c, s = math.cos(b), math.sin(b)
        dx, dy = c * u - s * v, s * u + c * v
        out[i + 2, 0] = out[i + 1, 0] + dx
        out[i + 2, 1] = out[i + 1, 1] + dy
    return out


def write_increments_csv(path, incr: Increments, first_index: int = 1) -> None:
    """Export increments as ``grid_index,y1,y2,step_length,turning_angle,observed``.

    ``grid_index`` is the grid slot at which the increment starts, i.e. the
    middle of the three coordinates it uses.
    """
    r, theta = incr.step_length, incr.turning_angle
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["grid_index", "y1", "y2", "step_length", "turning_angle", "observed"])
        for i in range(len(incr)):
            w.writerow([
                i + first_index,
                *(_fmt(v) for v in (incr.y[i, 0], incr.y[i, 1], r[i], theta[i])),
                int(incr.observed[i]),
            ])


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else format(float(v), ".17g")
