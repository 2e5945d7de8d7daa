# cython: boundscheck=False, wraparound=False, cdivision=True
"""Inverse-distance-weighted scalp interpolation (compiled hot kernel).

Semantics must match braingen._idw_py.idw_grid exactly: power-2 weights,
grid points coinciding with a channel take that channel's value, points
outside the unit disk are NaN.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()

COINCIDENCE_EPS = 1e-12


def idw_grid(cnp.ndarray[cnp.float64_t, ndim=2] points,
             cnp.ndarray[cnp.float64_t, ndim=1] values,
             int grid_res, double power=2.0):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.full(
        (grid_res, grid_res), np.nan, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] coords = np.linspace(
        -1.0, 1.0, grid_res)
    cdef int n = points.shape[0]
    cdef int i, j, k
    cdef double gx, gy, dx, dy, d2, w, wsum, vsum
    cdef double eps2 = COINCIDENCE_EPS * COINCIDENCE_EPS
    cdef bint inverse_square = power == 2.0

    for i in range(grid_res):
        gy = coords[i]
        for j in range(grid_res):
            gx = coords[j]
            if gx * gx + gy * gy > 1.0:
                continue
            wsum = 0.0
            vsum = 0.0
            for k in range(n):
                dx = gx - points[k, 0]
                dy = gy - points[k, 1]
                d2 = dx * dx + dy * dy
                if d2 <= eps2:
                    wsum = -1.0
                    vsum = values[k]
                    break
                if inverse_square:
                    w = 1.0 / d2
                else:
                    w = pow(d2, -power / 2.0)
                wsum += w
                vsum += w * values[k]
            if wsum < 0.0:
                out[i, j] = vsum
            else:
                out[i, j] = vsum / wsum
    return out
