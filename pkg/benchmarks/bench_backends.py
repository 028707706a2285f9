#!/usr/bin/env python3
"""Benchmark the compiled extension against the pure-NumPy fallback.

Runs each hot kernel on realistic sizes with both implementations loaded
side by side (no reinstall needed) and prints a timing table plus the
convolution-path comparison (direct vs separable vs FFT).

Usage: python benchmarks/bench_backends.py [--quick]
"""

import argparse
import math
import time

import numpy as np

from lidarbloom import _kernels_py
from lidarbloom import backend
from lidarbloom.beamkernel import gaussian_kernel, separate

try:
    from lidarbloom import _fastpath
except ImportError:
    _fastpath = None

DEG = math.pi / 180.0


def best_of(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def row(name, t_py, t_c):
    if t_c is None:
        print(f"{name:<38} {t_py * 1e3:>9.1f} ms {'-':>12}")
    else:
        print(f"{name:<38} {t_py * 1e3:>9.1f} ms {t_c * 1e3:>9.1f} ms "
              f"{t_py / t_c:>6.1f}x")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="smaller sizes")
    args = ap.parse_args()

    n = 512 if args.quick else 1024
    reps = 2 if args.quick else 3
    rng = np.random.default_rng(7)
    img = rng.random((n, n))
    img[img < 0.95] = 0.0

    print(f"image {n}x{n}, compiled extension "
          f"{'available' if _fastpath else 'NOT BUILT'}; "
          f"active backend: {backend.BACKEND}")
    print(f"{'kernel':<38} {'python':>12} {'compiled':>12} {'ratio':>6}")

    # dense correlation, small kernel (the direct-dispatch regime)
    k9 = np.ascontiguousarray(rng.random((9, 9)))
    out = np.empty_like(img)
    t_py = best_of(lambda: _kernels_py.correlate2d_direct_band(img, k9, out, 0, n), reps)
    t_c = best_of(lambda: _fastpath.correlate2d_direct_band(img, k9, out, 0, n), reps) \
        if _fastpath else None
    row("correlate2d direct 9x9", t_py, t_c)

    # separable pair, large kernel
    pitch = 0.02 * DEG
    grid = gaussian_kernel(8 * pitch, 8 * pitch, extent=4.0, step=pitch)
    pair = separate(grid, 1e-9)
    tmp = np.empty_like(img)

    def sep(mod):
        mod.correlate_sep_h_band(img, pair.h, tmp, 0, n)
        mod.correlate_sep_v_band(tmp, pair.v, out, 0, n)

    t_py = best_of(lambda: sep(_kernels_py), reps)
    t_c = best_of(lambda: sep(_fastpath), reps) if _fastpath else None
    row(f"separable {grid.shape[0]}x{grid.shape[1]} (two 1D passes)", t_py, t_c)

    # beam accumulation (per-beam kernel window into range bins)
    lo = rng.integers(0, 500, size=(n, n)).astype(np.int32)
    hi = np.minimum(lo + rng.integers(0, 3, size=(n, n)).astype(np.int32), 599)
    lo = np.ascontiguousarray(lo)
    hi = np.ascontiguousarray(hi)
    k65 = np.ascontiguousarray(grid.values)
    eta = np.zeros(600)

    def beams(mod, count=64):
        for b in range(count):
            mod.beam_accumulate(img, lo, hi, k65,
                                100 + (b * 11) % 800, 100 + (b * 7) % 800, eta)

    t_py = best_of(lambda: beams(_kernels_py), 1)
    t_c = best_of(lambda: beams(_fastpath), 1) if _fastpath else None
    row("beam_accumulate 64 beams, 65x65", t_py, t_c)

    # stacking overwrite pass
    conv = rng.random((n, n))
    eta2 = np.zeros((n, n))
    s2 = np.full((n, n), 600, dtype=np.int32)
    t_py = best_of(lambda: _kernels_py.stack_update_band(
        conv, 5, 0.5, False, eta2, s2, 0, n), reps)
    t_c = best_of(lambda: _fastpath.stack_update_band(
        conv, 5, 0.5, False, eta2, s2, 0, n), reps) if _fastpath else None
    row("stack_update", t_py, t_c)

    # convolution path comparison on the active backend
    print("\nconvolution paths (active backend) for a rank-1 "
          f"{grid.shape[0]}x{grid.shape[1]} kernel on the {n}x{n} slice:")
    t_direct = best_of(lambda: backend.correlate2d(
        img, grid.values, method="direct", workers=1), 1)
    t_fft = best_of(lambda: backend.correlate2d(
        img, grid.values, method="fft", workers=1), reps)
    t_sep = best_of(lambda: backend.correlate_separable(
        img, pair.h, pair.v, workers=1), reps)
    print(f"  dense 2D  {t_direct * 1e3:9.1f} ms")
    print(f"  FFT       {t_fft * 1e3:9.1f} ms   ({t_direct / t_fft:6.1f}x vs dense)")
    print(f"  separable {t_sep * 1e3:9.1f} ms   ({t_direct / t_sep:6.1f}x vs dense, "
          f"{t_fft / t_sep:.1f}x vs FFT)")


if __name__ == "__main__":
    main()
