"""Pure-NumPy fallback for the inverse-distance interpolation kernel.

Must match braingen._idw.idw_grid exactly (same coincidence rule, same
disk mask) so the two backends are interchangeable.
"""
from __future__ import annotations

import numpy as np

COINCIDENCE_EPS = 1e-12


def idw_grid(points: np.ndarray, values: np.ndarray, grid_res: int,
             power: float = 2.0) -> np.ndarray:
    coords = np.linspace(-1.0, 1.0, grid_res)
    gx, gy = np.meshgrid(coords, coords)  # gy varies along axis 0
    inside = gx ** 2 + gy ** 2 <= 1.0

    dx = gx[..., None] - points[:, 0]
    dy = gy[..., None] - points[:, 1]
    d2 = dx ** 2 + dy ** 2

    with np.errstate(divide="ignore"):
        w = d2 ** (-power / 2.0)
    interp = (w * values).sum(axis=-1) / w.sum(axis=-1)

    coincident = d2 <= COINCIDENCE_EPS ** 2
    hit = coincident.any(axis=-1)
    nearest = np.argmax(coincident, axis=-1)
    interp = np.where(hit, values[nearest], interp)

    out = np.full((grid_res, grid_res), np.nan)
    out[inside] = interp[inside]
    return out
