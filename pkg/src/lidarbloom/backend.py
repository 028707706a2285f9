"""Backend selection and the shared convolution/accumulation entry points.

At import time the compiled extension (:mod:`lidarbloom._fastpath`) is
preferred; the pure-NumPy twin (:mod:`lidarbloom._kernels_py`) is the
fallback. LIDARBLOOM_BACKEND=python|compiled forces the choice.

Direct correlation, the separable path and the stacking update are banded
over output rows and may run on a thread pool (the compiled kernels release
the GIL); every band is computed independently, so results are identical
for any worker count. Large kernels are routed to a single-threaded FFT
path shared by both backends.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels_py

_forced = os.environ.get("LIDARBLOOM_BACKEND", "").strip().lower()
if _forced not in ("", "python", "compiled"):
    raise ImportError(f"LIDARBLOOM_BACKEND must be 'python' or 'compiled', got {_forced!r}")

if _forced == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _fastpath as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        _impl = _kernels_py
        BACKEND = "python"

# Kernels up to this many cells use direct correlation; larger ones go
# through the FFT path (crossover measured on 1024^2 slices).
DIRECT_MAX_CELLS = 225


def resolve_workers(workers: int | None = None) -> int:
    """Worker count: explicit argument > LIDARBLOOM_WORKERS > cpu count."""
    if workers is None or workers <= 0:
        env = os.environ.get("LIDARBLOOM_WORKERS", "").strip()
        if env:
            workers = int(env)
        else:
            workers = os.cpu_count() or 1
    return max(1, workers)


def _run_banded(fn, n_rows: int, workers: int):
    """Call ``fn(y0, y1)`` over a row partition, possibly on threads."""
    workers = min(workers, n_rows)
    if workers <= 1:
        fn(0, n_rows)
        return
    bounds = np.linspace(0, n_rows, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(fn, int(bounds[k]), int(bounds[k + 1]))
            for k in range(workers)
            if bounds[k] < bounds[k + 1]
        ]
        for f in futures:
            f.result()


def _next_fast_len(n: int) -> int:
    """Smallest 5-smooth integer >= n (fast FFT size)."""
    while True:
        m = n
        for p in (2, 3, 5):
            while m % p == 0:
                m //= p
        if m == 1:
            return n
        n += 1


def correlate2d_fft(img: np.ndarray, ker: np.ndarray,
                    ker_fft=None, shape=None) -> np.ndarray:
    """Zero-padded centered cross-correlation via real FFTs.

    ``ker_fft``/``shape`` allow reusing the kernel transform across many
    slices (see :func:`fft_plan`).
    """
    H, W = img.shape
    kh, kw = ker.shape
    if shape is None:
        shape = (_next_fast_len(H + kh - 1), _next_fast_len(W + kw - 1))
    if ker_fft is None:
        ker_fft = np.fft.rfft2(ker[::-1, ::-1], shape)
    conv = np.fft.irfft2(np.fft.rfft2(img, shape) * ker_fft, shape)
    cy, cx = kh // 2, kw // 2
    return np.ascontiguousarray(conv[cy:cy + H, cx:cx + W])


def fft_plan(img_shape, ker: np.ndarray):
    """Precompute (ker_fft, padded_shape) for repeated correlate2d_fft calls."""
    H, W = img_shape
    kh, kw = ker.shape
    shape = (_next_fast_len(H + kh - 1), _next_fast_len(W + kw - 1))
    return np.fft.rfft2(ker[::-1, ::-1], shape), shape


def choose_conv_method(ker_shape) -> str:
    return "direct" if ker_shape[0] * ker_shape[1] <= DIRECT_MAX_CELLS else "fft"


def correlate2d(img: np.ndarray, ker: np.ndarray, workers: int | None = None,
                method: str = "auto", plan=None) -> np.ndarray:
    """Centered cross-correlation with zero padding ('full 2D path').

    method: 'auto' picks direct for small kernels and FFT for large ones;
    'direct' and 'fft' force the path.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    ker = np.ascontiguousarray(ker, dtype=np.float64)
    if method == "auto":
        method = choose_conv_method(ker.shape)
    if method == "fft":
        if plan is not None:
            return correlate2d_fft(img, ker, ker_fft=plan[0], shape=plan[1])
        return correlate2d_fft(img, ker)
    if method != "direct":
        raise ValueError(f"unknown convolution method {method!r}")
    out = np.empty_like(img)
    _run_banded(
        lambda y0, y1: _impl.correlate2d_direct_band(img, ker, out, y0, y1),
        img.shape[0], resolve_workers(workers),
    )
    return out


def correlate_separable(img: np.ndarray, h: np.ndarray, v: np.ndarray,
                        workers: int | None = None) -> np.ndarray:
    """Separable correlation: horizontal pass with ``h``, then vertical with ``v``."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    workers = resolve_workers(workers)
    tmp = np.empty_like(img)
    _run_banded(
        lambda y0, y1: _impl.correlate_sep_h_band(img, h, tmp, y0, y1),
        img.shape[0], workers,
    )
    out = np.empty_like(img)
    _run_banded(
        lambda y0, y1: _impl.correlate_sep_v_band(tmp, v, out, y0, y1),
        img.shape[0], workers,
    )
    return out


def beam_accumulate(rho, lo, hi, ker, u0: int, v0: int, eta) -> None:
    """Accumulate one beam's kernel window into its range signal (in place)."""
    _impl.beam_accumulate(rho, lo, hi, ker, u0, v0, eta)


def stack_update(conv, s: int, rho_min: float, strongest: bool,
                 eta_nearest, s_nearest, workers: int | None = None) -> None:
    """Apply one slice's thresholded overwrite to the stacking state (in place)."""
    _run_banded(
        lambda y0, y1: _impl.stack_update_band(
            conv, s, rho_min, strongest, eta_nearest, s_nearest, y0, y1),
        conv.shape[0], resolve_workers(workers),
    )
