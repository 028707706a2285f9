"""Effective beam kernels: the product of emitter intensity and collector
sensitivity over angular offsets from the beam center.

Grids are centered (odd dimensions), nonnegative and carry their angular
step; values are relative (the whole pipeline is calibrated relatively, so
only ratios matter). Kernels can be built analytically, loaded from
measurement files, combined, normalized, resampled and decomposed into a
rank-1 separable pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# Guard against accidentally requesting absurd grids (cells = side^2).
MAX_GRID_SIDE = 8192

DEG = math.pi / 180.0


class KernelFileError(ValueError):
    """Malformed kernel/pulse grid file."""


@dataclass(frozen=True)
class AngularGrid:
    """Centered 2D grid over angular offsets.

    values[j, i]: row j is the vertical offset, column i the horizontal one;
    the center cell is values[rows//2, cols//2]. ``step`` is radians per
    sample along both axes.
    """

    values: np.ndarray
    step: float
    normalization: str = "raw"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("kernel grid must be 2D")
        if v.shape[0] % 2 == 0 or v.shape[1] % 2 == 0:
            raise ValueError(f"kernel grid must have odd dimensions, got {v.shape}")
        if self.step <= 0:
            raise ValueError("angular step must be positive")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("kernel values must be finite and nonnegative")
        if self.normalization not in ("raw", "peak", "sum"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    @property
    def center(self):
        return self.values.shape[0] // 2, self.values.shape[1] // 2

    def horizontal_angles(self) -> np.ndarray:
        n = self.values.shape[1]
        return (np.arange(n) - n // 2) * self.step

    def vertical_angles(self) -> np.ndarray:
        n = self.values.shape[0]
        return (np.arange(n) - n // 2) * self.step


@dataclass(frozen=True)
class SeparableKernel:
    """Rank-1 approximation values ~ outer(v, h) with its relative residual."""

    h: np.ndarray  # horizontal factor, length = grid columns
    v: np.ndarray  # vertical factor, length = grid rows
    residual: float
    step: float

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if h.ndim != 1 or v.ndim != 1 or h.size % 2 == 0 or v.size % 2 == 0:
            raise ValueError("separable factors must be odd-length 1D vectors")
        if np.any(h < 0) or np.any(v < 0):
            raise ValueError("separable factors must be nonnegative")
        if not (0.0 <= self.residual <= 1.0):
            raise ValueError("residual must lie in [0, 1]")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "v", v)

    def outer(self) -> np.ndarray:
        return np.outer(self.v, self.h)

    @property
    def shape(self):
        return self.v.size, self.h.size

    def kernel_sum(self) -> float:
        return float(self.h.sum() * self.v.sum())


def _gaussian_profile(offsets: np.ndarray, sigma: float, tail_sigma, tail_amp: float):
    g = np.exp(-0.5 * (offsets / sigma) ** 2)
    if tail_sigma is not None and tail_amp > 0.0:
        g = g + tail_amp * np.exp(-0.5 * (offsets / tail_sigma) ** 2)
    return g


def gaussian_kernel(sigma_h: float, sigma_v: float, extent: float, step: float,
                    tail_sigma_h: float | None = None,
                    tail_sigma_v: float | None = None,
                    tail_amplitude: float = 0.0) -> AngularGrid:
    """Sampled 2D Gaussian beam profile, peak-normalized to 1.

    ``extent`` is the half-width in multiples of the largest sigma involved.
    An optional wide, dim tail (relative ``tail_amplitude`` at the center)
    models the measured many-orders-of-magnitude skirt responsible for
    blooming. The result is a sum of two separable Gaussians, so it is
    exactly rank-1 only without the tail.
    """
    if sigma_h <= 0 or sigma_v <= 0 or step <= 0:
        raise ValueError("sigmas and step must be positive")
    if extent < 1:
        raise ValueError("extent must be at least 1 sigma")
    if tail_amplitude < 0:
        raise ValueError("tail_amplitude must be nonnegative")
    sig_h_max = max(sigma_h, tail_sigma_h or 0.0)
    sig_v_max = max(sigma_v, tail_sigma_v or 0.0)
    nh = int(math.ceil(extent * sig_h_max / step))
    nv = int(math.ceil(extent * sig_v_max / step))
    if 2 * nh + 1 > MAX_GRID_SIDE or 2 * nv + 1 > MAX_GRID_SIDE:
        raise ValueError(f"requested kernel exceeds the {MAX_GRID_SIDE} px side limit")
    xs = (np.arange(2 * nh + 1) - nh) * step
    ys = (np.arange(2 * nv + 1) - nv) * step
    gx_core = np.exp(-0.5 * (xs / sigma_h) ** 2)
    gy_core = np.exp(-0.5 * (ys / sigma_v) ** 2)
    values = np.outer(gy_core, gx_core)
    if tail_amplitude > 0.0:
        tsh = tail_sigma_h if tail_sigma_h is not None else sigma_h
        tsv = tail_sigma_v if tail_sigma_v is not None else sigma_v
        gx_tail = np.exp(-0.5 * (xs / tsh) ** 2)
        gy_tail = np.exp(-0.5 * (ys / tsv) ** 2)
        values = values + tail_amplitude * np.outer(gy_tail, gx_tail)
    values /= values[nv, nh]
    return AngularGrid(values=values, step=step, normalization="peak")


def combine(emitter: AngularGrid, collector: AngularGrid,
            resample: bool = False, align_peaks: bool = False) -> AngularGrid:
    """Elementwise product of emitter and collector grids (the effective kernel).

    Grids must share step and shape; pass ``resample=True`` to bilinearly
    resample the collector onto the emitter grid first (explicit opt-in so
    measurement-step mistakes stay visible). ``align_peaks`` shifts each grid
    so its maximum sits on the center cell before multiplying; measured grids
    have no common angular origin, so peak alignment is how they are
    registered.
    """
    if align_peaks:
        emitter = recenter_on_peak(emitter)
        collector = recenter_on_peak(collector)
    if abs(emitter.step - collector.step) > 1e-15 * max(emitter.step, collector.step):
        if not resample:
            raise ValueError(
                f"angular steps differ ({emitter.step} vs {collector.step}); "
                "pass resample=True to resample the collector")
        collector = resample_bilinear(collector, emitter.step)
    if emitter.shape != collector.shape:
        if not resample:
            raise ValueError(
                f"grid shapes differ ({emitter.shape} vs {collector.shape}); "
                "pass resample=True to pad/crop the collector")
        collector = _fit_shape(collector, emitter.shape)
    return AngularGrid(values=emitter.values * collector.values,
                       step=emitter.step, normalization="raw")


def _fit_shape(grid: AngularGrid, shape) -> AngularGrid:
    """Center-pad with zeros or center-crop to the target odd shape."""
    out = np.zeros(shape, dtype=np.float64)
    rj = min(grid.shape[0], shape[0]) // 2
    ri = min(grid.shape[1], shape[1]) // 2
    cj, ci = shape[0] // 2, shape[1] // 2
    gj, gi = grid.center
    out[cj - rj:cj + rj + 1, ci - ri:ci + ri + 1] = \
        grid.values[gj - rj:gj + rj + 1, gi - ri:gi + ri + 1]
    return AngularGrid(values=out, step=grid.step, normalization=grid.normalization)


def recenter_on_peak(grid: AngularGrid) -> AngularGrid:
    """Shift the grid (zero fill) so its maximum lands on the center cell."""
    j, i = np.unravel_index(int(np.argmax(grid.values)), grid.shape)
    cj, ci = grid.center
    dj, di = cj - j, ci - i
    if dj == 0 and di == 0:
        return grid
    out = np.zeros_like(grid.values)
    src_j = slice(max(0, -dj), grid.shape[0] - max(0, dj))
    src_i = slice(max(0, -di), grid.shape[1] - max(0, di))
    dst_j = slice(max(0, dj), grid.shape[0] - max(0, -dj))
    dst_i = slice(max(0, di), grid.shape[1] - max(0, -di))
    out[dst_j, dst_i] = grid.values[src_j, src_i]
    return replace(grid, values=out)


def resample_bilinear(grid: AngularGrid, new_step: float) -> AngularGrid:
    """Resample onto a new uniform angular step via bilinear interpolation.

    The angular half-extent is preserved as closely as the new step allows
    without growing, so every sample falls inside the source grid.
    """
    if new_step <= 0:
        raise ValueError("new step must be positive")
    nv, nh = grid.center
    new_nh = int(math.floor(nh * grid.step / new_step))
    new_nv = int(math.floor(nv * grid.step / new_step))
    if 2 * new_nh + 1 > MAX_GRID_SIDE or 2 * new_nv + 1 > MAX_GRID_SIDE:
        raise ValueError("resampled kernel would exceed the grid side limit")
    xs = (np.arange(2 * new_nh + 1) - new_nh) * (new_step / grid.step) + nh
    ys = (np.arange(2 * new_nv + 1) - new_nv) * (new_step / grid.step) + nv
    x0 = np.clip(np.floor(xs).astype(int), 0, grid.shape[1] - 2)
    y0 = np.clip(np.floor(ys).astype(int), 0, grid.shape[0] - 2)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    v = grid.values
    out = (v[np.ix_(y0, x0)] * np.outer(1 - fy, 1 - fx)
           + v[np.ix_(y0, x0 + 1)] * np.outer(1 - fy, fx)
           + v[np.ix_(y0 + 1, x0)] * np.outer(fy, 1 - fx)
           + v[np.ix_(y0 + 1, x0 + 1)] * np.outer(fy, fx))
    # interpolation of nonnegative data can produce -0.0 only; clamp anyway
    np.maximum(out, 0.0, out=out)
    return AngularGrid(values=out, step=new_step, normalization="raw")


def rank_one_approximation(grid: AngularGrid, max_iter: int = 500,
                           tol: float = 1e-15) -> SeparableKernel:
    """Best rank-1 approximation via alternating power iteration.

    Factors are sign-fixed to be nonnegative (both flipped together) and
    residual is the relative Frobenius error of the reconstruction. Tiny
    negative entries below 1e-15 of the factor peak are truncated to zero.
    """
    K = grid.values
    norm_K = float(np.linalg.norm(K))
    if norm_K == 0.0:
        raise ValueError("cannot separate an all-zero kernel")
    # deterministic start: dominant column profile
    u = K.sum(axis=1)
    if not np.any(u):
        u = np.ones(K.shape[0])
    u = u / np.linalg.norm(u)
    sigma_prev = 0.0
    for _ in range(max_iter):
        w = K.T @ u
        wn = np.linalg.norm(w)
        if wn == 0.0:
            break
        w /= wn
        u_new = K @ w
        sigma = float(np.linalg.norm(u_new))
        if sigma == 0.0:
            break
        u = u_new / sigma
        if abs(sigma - sigma_prev) <= tol * sigma:
            break
        sigma_prev = sigma
    w = K.T @ u
    sigma = float(np.linalg.norm(w))
    v_vert = u * math.sqrt(sigma)
    h_horz = (w / sigma) * math.sqrt(sigma) if sigma > 0 else w
    if h_horz.sum() < 0:
        h_horz, v_vert = -h_horz, -v_vert
    peak = max(float(np.abs(h_horz).max()), float(np.abs(v_vert).max()), 1.0)
    h_horz[np.abs(h_horz) < 1e-15 * peak] = 0.0
    v_vert[np.abs(v_vert) < 1e-15 * peak] = 0.0
    h_horz = np.maximum(h_horz, 0.0)
    v_vert = np.maximum(v_vert, 0.0)
    residual = float(np.linalg.norm(K - np.outer(v_vert, h_horz)) / norm_K)
    return SeparableKernel(h=h_horz, v=v_vert, residual=min(residual, 1.0),
                           step=grid.step)


def separate(grid: AngularGrid, tolerance: float) -> SeparableKernel | None:
    """Rank-1 decomposition, or None (refusal) when the relative residual
    exceeds ``tolerance``."""
    pair = rank_one_approximation(grid)
    if pair.residual > tolerance:
        return None
    return pair


def normalize(grid: AngularGrid, mode: str) -> AngularGrid:
    """Scale so the peak (mode='peak') or the total (mode='sum') equals 1."""
    if mode not in ("peak", "sum"):
        raise ValueError(f"normalization mode must be 'peak' or 'sum', got {mode!r}")
    ref = float(grid.values.max()) if mode == "peak" else float(grid.values.sum())
    if ref <= 0.0:
        raise ValueError("cannot normalize an all-zero kernel")
    return AngularGrid(values=grid.values / ref, step=grid.step, normalization=mode)


# ---------------------------------------------------------------------------
# Grid file format: text header (key=value lines) followed by whitespace-
# separated row-major values; 17 significant digits give bit-exact round trips.
# ---------------------------------------------------------------------------

def save_grid(grid: AngularGrid, path, step_key: str = "step_deg") -> None:
    with open(path, "w", encoding="ascii") as f:
        step = grid.step / DEG if step_key == "step_deg" else grid.step
        f.write(f"{step_key}={step:.17g}\n")
        f.write(f"rows={grid.shape[0]}\n")
        f.write(f"cols={grid.shape[1]}\n")
        f.write(f"normalization={grid.normalization}\n")
        for row in grid.values:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def _parse_grid_file(path, step_keys=("step_deg", "step")):
    headers = {}
    values = []
    cols = None
    with open(path, "r", encoding="ascii") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if "=" in line and not values:
                key, _, val = line.partition("=")
                headers[key.strip()] = val.strip()
                continue
            try:
                row = [float(tok) for tok in line.split()]
            except ValueError as exc:
                raise KernelFileError(f"{path}:{lineno}: bad value ({exc})") from None
            if any(v < 0 for v in row):
                raise KernelFileError(f"{path}:{lineno}: negative kernel value")
            if cols is None:
                cols = len(row)
            elif len(row) != cols:
                raise KernelFileError(
                    f"{path}:{lineno}: expected {cols} values per row, got {len(row)}")
            values.append(row)
    step_key = next((k for k in step_keys if k in headers), None)
    if step_key is None:
        raise KernelFileError(f"{path}:1: missing step header ({'/'.join(step_keys)})")
    try:
        step = float(headers[step_key])
        rows = int(headers.get("rows", len(values)))
        ncols = int(headers.get("cols", cols or 0))
    except ValueError as exc:
        raise KernelFileError(f"{path}:1: bad header ({exc})") from None
    if step <= 0:
        raise KernelFileError(f"{path}:1: nonpositive step")
    if len(values) != rows or (values and len(values[0]) != ncols):
        raise KernelFileError(
            f"{path}: header declares {rows}x{ncols} but file has "
            f"{len(values)}x{len(values[0]) if values else 0}")
    if not values:
        raise KernelFileError(f"{path}: no values")
    norm = headers.get("normalization", "raw")
    return np.array(values, dtype=np.float64), step, step_key, norm


def load_measurement(path) -> AngularGrid:
    """Load a 2D measured kernel grid (step_deg header, degrees in file)."""
    values, step_deg, step_key, norm = _parse_grid_file(path, step_keys=("step_deg",))
    return AngularGrid(values=values, step=step_deg * DEG, normalization=norm)


def _load_slice(path) -> tuple[np.ndarray, float]:
    values, step_deg, _, _ = _parse_grid_file(path, step_keys=("step_deg",))
    if values.shape[0] != 1:
        raise KernelFileError(f"{path}: slice file must have rows=1")
    return values[0], step_deg * DEG


def load_sensitivity_slices(h_path, v_path) -> AngularGrid:
    """Combine two 1D sensitivity slices into a 2D grid via outer product.

    Each slice is recentered on its peak first (the measurements share no
    angular origin); mismatched steps are an error.
    """
    h, h_step = _load_slice(h_path)
    v, v_step = _load_slice(v_path)
    if abs(h_step - v_step) > 1e-15 * max(h_step, v_step):
        raise KernelFileError(
            f"slice steps differ: {h_path} has {h_step}, {v_path} has {v_step}")
    if h.size % 2 == 0 or v.size % 2 == 0:
        raise KernelFileError("slice files must have odd length")
    h = _recenter_1d(h)
    v = _recenter_1d(v)
    return AngularGrid(values=np.outer(v, h), step=h_step, normalization="raw")


def _recenter_1d(vec: np.ndarray) -> np.ndarray:
    c = vec.size // 2
    p = int(np.argmax(vec))
    if p == c:
        return vec
    out = np.zeros_like(vec)
    d = c - p
    if d > 0:
        out[d:] = vec[:-d]
    else:
        out[:d] = vec[-d:]
    return out
