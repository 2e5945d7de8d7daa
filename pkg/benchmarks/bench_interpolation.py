"""Benchmark the compiled scalp-interpolation kernel against the NumPy
fallback.

Run:  python benchmarks/bench_interpolation.py
"""
import time

import numpy as np

from braingen import _idw_py
from braingen.topoviz import IDW_BACKEND, disk_montage, interpolate_scalp

try:
    from braingen import _idw

    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False


def bench(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"selected backend: {IDW_BACKEND}")
    print(f"{'channels':>9} {'grid':>5} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for n_channels in (32, 63, 271):
        montage = disk_montage([f"c{i}" for i in range(n_channels)])
        points = np.ascontiguousarray(montage.coords)
        values = rng.standard_normal(n_channels)
        for grid in (64, 128, 256):
            t_py = bench(lambda: _idw_py.idw_grid(points, values, grid))
            if HAVE_COMPILED:
                t_cy = bench(lambda: _idw.idw_grid(points, values, grid))
                a = _idw.idw_grid(points, values, grid)
                b = _idw_py.idw_grid(points, values, grid)
                assert np.nanmax(np.abs(a - b)) < 1e-12, "backends disagree"
                print(f"{n_channels:>9} {grid:>5} {t_py * 1e3:>10.2f} "
                      f"{t_cy * 1e3:>10.2f} {t_py / t_cy:>8.1f}x")
            else:
                print(f"{n_channels:>9} {grid:>5} {t_py * 1e3:>10.2f} "
                      f"{'n/a':>10} {'n/a':>8}")
    # sanity: the public entry point produces the same grid
    montage = disk_montage([f"c{i}" for i in range(63)])
    values = rng.standard_normal(63)
    grid = interpolate_scalp(values, montage, grid_res=64)
    ref = _idw_py.idw_grid(np.ascontiguousarray(montage.coords), values, 64)
    assert np.nanmax(np.abs(grid - ref)) < 1e-12


if __name__ == "__main__":
    main()
