"""Scalp topography rendering: windowed channel means interpolated over a
unit-disk grid, drawn as train / test / generated / difference rows.

The interpolation kernel has a compiled backend (braingen._idw, Cython)
with a pure-NumPy fallback selected at import time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

try:
    from . import _idw as _idw_backend

    IDW_BACKEND = "cython"
except ImportError:  # extension not built; semantics are identical
    from . import _idw_py as _idw_backend

    IDW_BACKEND = "numpy"

GRID_RES = 64


@dataclass(frozen=True)
class Montage:
    """Channel name -> planar (x, y) coordinates in the unit disk."""

    names: tuple[str, ...]
    coords: np.ndarray  # (n, 2)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise DataError("montage: duplicate channel names")
        if np.any(np.abs(self.coords) > 1.0):
            raise DataError("montage: coordinates outside [-1, 1]^2")
        d = self.coords[:, None, :] - self.coords[None, :, :]
        dist = np.sqrt((d ** 2).sum(-1)) + np.eye(len(self.names))
        if np.any(dist < 1e-9):
            raise DataError("montage: duplicate channel coordinates")

    def points_for(self, channel_names: list[str]) -> np.ndarray:
        lookup = {n: i for i, n in enumerate(self.names)}
        missing = [n for n in channel_names if n not in lookup]
        if missing:
            raise DataError(f"montage missing channels: {missing[:5]}")
        return self.coords[[lookup[n] for n in channel_names]]


def load_montage(path) -> Montage:
    names, coords = [], []
    with open(path, encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 3:
                raise DataError(f"montage line needs name,x,y: {row}")
            names.append(row[0])
            coords.append((float(row[1]), float(row[2])))
    return Montage(names=tuple(names), coords=np.asarray(coords, dtype=np.float64))


def disk_montage(names: list[str], radius: float = 0.95) -> Montage:
    """Sunflower (Fibonacci) layout over the disk for synthetic channel sets."""
    n = len(names)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    idx = np.arange(n, dtype=np.float64)
    r = radius * np.sqrt((idx + 0.5) / n)
    theta = golden * idx
    coords = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return Montage(names=tuple(names), coords=coords)


def save_montage(montage: Montage, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for name, (x, y) in zip(montage.names, montage.coords):
            writer.writerow([name, f"{x:.6f}", f"{y:.6f}"])
    return path


def window_average(signal: np.ndarray, window_ms: float, rate_hz: float) -> list[np.ndarray]:
    """Per-channel means over consecutive windows; trailing remainder dropped."""
    n_t = signal.shape[1]
    w = int(window_ms * rate_hz / 1000.0)
    if w < 1:
        raise ConfigError(f"window {window_ms} ms at {rate_hz} Hz spans < 1 sample")
    if w > n_t:
        raise ConfigError(f"window of {w} samples longer than epoch of {n_t}")
    return [signal[:, k * w:(k + 1) * w].mean(axis=1) for k in range(n_t // w)]


def interpolate_scalp(values: np.ndarray, montage: Montage, grid_res: int = GRID_RES,
                      channel_names: list[str] | None = None) -> np.ndarray:
    """Power-2 inverse-distance interpolation over the unit disk.

    Returns a grid with NaN outside the disk; a grid point coinciding with a
    channel takes that channel's value.
    """
    values = np.asarray(values, dtype=np.float64)
    if channel_names is not None:
        points = montage.points_for(channel_names)
    else:
        points = montage.coords
    if len(values) != len(points):
        raise DataError(f"{len(values)} values for {len(points)} channels")
    return _idw_backend.idw_grid(np.ascontiguousarray(points), values, grid_res)


@dataclass
class TopoSeries:
    """Interpolated frames for one signal row."""

    window_ms: float
    frames: list[tuple[float, float, np.ndarray, np.ndarray]]  # (start, end, values, grid)


def topo_series(signal: np.ndarray, montage: Montage, channel_names: list[str],
                window_ms: float, rate_hz: float, grid_res: int = GRID_RES,
                start_ms: float = 0.0) -> TopoSeries:
    means = window_average(signal, window_ms, rate_hz)
    frames = []
    for k, vals in enumerate(means):
        grid = interpolate_scalp(vals, montage, grid_res, channel_names)
        frames.append((start_ms + k * window_ms, start_ms + (k + 1) * window_ms,
                       vals, grid))
    return TopoSeries(window_ms=window_ms, frames=frames)


def render_comparison(train_avg: np.ndarray, test_avg: np.ndarray,
                      generated_avg: np.ndarray, montage: Montage,
                      channel_names: list[str], window_ms: float, rate_hz: float,
                      out_path, grid_res: int = GRID_RES, start_ms: float = 0.0,
                      units: str = "a.u.") -> Path:
    """Four rows of frames: train, test, generated, and train - test difference,
    each with a shared symmetric color scale."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    shapes = {train_avg.shape, test_avg.shape, generated_avg.shape}
    if len(shapes) != 1:
        raise DataError(f"row shapes differ: {shapes}")
    rows = {
        "train": train_avg,
        "test": test_avg,
        "generated": generated_avg,
        "difference": train_avg - test_avg,
    }
    series = {
        name: topo_series(sig, montage, channel_names, window_ms, rate_hz,
                          grid_res, start_ms)
        for name, sig in rows.items()
    }
    n_frames = len(next(iter(series.values())).frames)
    fig, axes = plt.subplots(4, n_frames, figsize=(1.5 * n_frames, 6.5),
                             squeeze=False)
    theta = np.linspace(0, 2 * np.pi, 128)
    for r, (name, ser) in enumerate(series.items()):
        vmax = max(np.nanmax(np.abs(f[3])) for f in ser.frames) or 1e-12
        for c, (t0, t1, _, grid) in enumerate(ser.frames):
            ax = axes[r][c]
            ax.imshow(grid, origin="lower", extent=(-1, 1, -1, 1), cmap="RdBu_r",
                      vmin=-vmax, vmax=vmax)
            ax.plot(np.cos(theta), np.sin(theta), color="black", linewidth=0.8)
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(f"{t0:.0f}-{t1:.0f} ms", fontsize=7)
            if c == 0:
                ax.set_ylabel(f"{name}\n±{vmax:.3g} {units}", fontsize=7)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=110, format="png", bbox_inches="tight")
    plt.close(fig)
    return out_path
