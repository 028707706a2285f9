"""The two core signal-synthesis algorithms plus a brute-force oracle.

Beam iteration walks every kernel cell of every beam and accumulates
kernel-weighted pixel intensities into a per-beam signal over range bins.
Range stacking slices the G-buffer by range bin, cross-correlates each
occupied slice with the centered kernel and propagates the nearest (or
strongest) echo from far to near. In point mode the two produce identical
intensities at the beam pixels, down to summation order.

Range bins are 0-based: bin s covers [s*delta_r, (s+1)*delta_r), ranges are
read out at bin centers (s + 0.5)*delta_r. Pixels at or beyond r_max and
sky pixels contribute nothing.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import backend
from .beamkernel import AngularGrid, SeparableKernel, resample_bilinear
from .geometry import EPS_PARALLEL, PinholeProjection, \
    direction_to_pixel, pixel_to_direction
from .scanpattern import ScanPattern
from .scene import GBuffer

PROPAGATION_MODES = ("nearest", "strongest")
PIXEL_RANGE_MODES = ("point", "extent")


@dataclass(frozen=True)
class SimConfig:
    """Discretization and propagation settings shared by both algorithms."""

    delta_r: float
    r_max: float
    rho_min: float = 0.0
    propagation: str = "nearest"
    pixel_range_mode: str = "point"

    def __post_init__(self):
        if self.delta_r <= 0:
            raise ValueError("delta_r must be positive")
        if self.r_max <= self.delta_r:
            raise ValueError("r_max must exceed delta_r")
        if self.rho_min < 0:
            raise ValueError("rho_min must be nonnegative")
        if self.propagation not in PROPAGATION_MODES:
            raise ValueError(f"propagation must be one of {PROPAGATION_MODES}")
        if self.pixel_range_mode not in PIXEL_RANGE_MODES:
            raise ValueError(f"pixel_range_mode must be one of {PIXEL_RANGE_MODES}")

    @property
    def s_max(self) -> int:
        return int(math.floor(self.r_max / self.delta_r))


@dataclass(frozen=True)
class EchoSignal:
    """Received intensity over range bins for one beam."""

    eta: np.ndarray
    delta_r: float

    def bin_range(self, s: int) -> float:
        return (s + 0.5) * self.delta_r


@dataclass(frozen=True)
class SliceStats:
    total_bins: int
    occupied: int
    processed: int
    skipped_empty: int
    skipped_subthreshold: int


@dataclass(frozen=True)
class StackResult:
    """Dominant range bin and intensity per pixel.

    ``s_nearest == s_max`` is the no-echo sentinel (bins run 0..s_max-1).
    """

    s_nearest: np.ndarray
    eta_nearest: np.ndarray
    delta_r: float
    r_max: float
    stats: SliceStats


def pixel_range_interval(u: int, v: int, ranges, normals, proj: PinholeProjection,
                         delta_r: float, r_max: float, mode: str = "extent",
                         eps_parallel: float = EPS_PARALLEL):
    """Range interval contained within pixel (column u, row v).

    Point mode returns the degenerate interval at the stored range. Extent
    mode extrapolates the pixel-center range to the four pixel-corner
    directions via the surface normal and spans their min/max, clamped to
    [0, r_max]. Grazing normals (any corner with |v.n| < eps) refuse the
    extrapolation: the interval collapses to the center range (one bin) and
    the flag is set. Returns (r0, r1, grazing).
    """
    r = float(ranges[v, u])
    if not math.isfinite(r):
        raise ValueError("pixel has no surface (infinite range)")
    if mode == "point":
        return r, r, False
    if mode != "extent":
        raise ValueError(f"unknown pixel_range_mode {mode!r}")
    n = normals[v, u]
    p = pixel_to_direction(np.array([u + 0.5, v + 0.5]), proj)
    pn = float(np.sum(p * n))
    r0 = r1 = None
    grazing = False
    for dy in (0.0, 1.0):
        for dx in (0.0, 1.0):
            c = pixel_to_direction(np.array([u + dx, v + dy]), proj)
            vn = float(np.sum(c * n))
            if abs(vn) >= eps_parallel:
                rc = pn / vn * r
            else:
                rc = r
                grazing = True
            r0 = rc if r0 is None else min(r0, rc)
            r1 = rc if r1 is None else max(r1, rc)
    if grazing:
        r0 = r1 = r
    r0 = min(max(r0, 0.0), r_max)
    r1 = min(max(r1, 0.0), r_max)
    return r0, r1, grazing


def _range_bin_maps(gbuffer: GBuffer, config: SimConfig):
    """Per-pixel inclusive bin interval maps (lo, hi) as int32; lo = -1 marks
    pixels that contribute nothing (sky, beyond r_max).

    Vectorized counterpart of :func:`pixel_range_interval` followed by bin
    conversion; kept arithmetically identical to the scalar path so the
    brute-force oracle matches the engines exactly.
    """
    ranges = gbuffer.ranges
    H, W = ranges.shape
    s_max = config.s_max
    finite = np.isfinite(ranges)
    if config.pixel_range_mode == "point":
        r0 = np.where(finite, ranges, 0.0)
        r1 = r0
    else:
        proj = gbuffer.projection
        n = gbuffer.normals
        ys, xs = np.mgrid[0:H, 0:W]
        center = np.stack([xs + 0.5, ys + 0.5], axis=-1)
        p = pixel_to_direction(center, proj)
        pn = np.sum(p * n, axis=-1)
        corner_grid = pixel_to_direction(
            np.stack(np.meshgrid(np.arange(W + 1, dtype=float),
                                 np.arange(H + 1, dtype=float), indexing="xy"),
                     axis=-1), proj)
        r = np.where(finite, ranges, 1.0)
        r0 = np.full((H, W), np.inf)
        r1 = np.full((H, W), -np.inf)
        grazing = np.zeros((H, W), dtype=bool)
        for dy in (0, 1):
            for dx in (0, 1):
                c = corner_grid[dy:dy + H, dx:dx + W]
                vn = np.sum(c * n, axis=-1)
                ok = np.abs(vn) >= EPS_PARALLEL
                rc = np.where(ok, pn / np.where(ok, vn, 1.0) * r, r)
                grazing |= ~ok
                r0 = np.minimum(r0, rc)
                r1 = np.maximum(r1, rc)
        r0 = np.where(grazing, r, r0)
        r1 = np.where(grazing, r, r1)
        r0 = np.clip(r0, 0.0, config.r_max)
        r1 = np.clip(r1, 0.0, config.r_max)
    s0 = np.floor(r0 / config.delta_r)
    s1 = np.floor(r1 / config.delta_r)
    valid = finite & (s0 < s_max)
    lo = np.where(valid, s0, -1).astype(np.int32)
    hi = np.where(valid, np.minimum(s1, s_max - 1), -1).astype(np.int32)
    return lo, hi


def beam_pixel(beta, proj: PinholeProjection):
    """roundToPixels: integer pixel whose center is nearest the beam direction.

    Returns None for directions behind the image plane. The returned indices
    may lie outside the image; kernel windows are clipped downstream.
    """
    d = beta.to_direction()
    if d[2] <= 0:
        return None
    px = direction_to_pixel(d, proj)
    x, y = float(px[0]), float(px[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        return None
    # guard against absurd projections before the int conversion
    limit = 1e9
    if abs(x) > limit or abs(y) > limit:
        return None
    return int(math.floor(x)), int(math.floor(y))


def prepare_kernel(kernel: AngularGrid, proj: PinholeProjection) -> AngularGrid:
    """Match the kernel's angular step to the pixel pitch at the image center."""
    pitch = proj.center_pitch_rad
    if abs(kernel.step - pitch) <= 1e-9 * pitch:
        return kernel
    return resample_bilinear(kernel, pitch)


def beam_iteration(gbuffer: GBuffer, kernel: AngularGrid, pattern: ScanPattern,
                   config: SimConfig, workers: int | None = None) -> list[EchoSignal]:
    """Per-beam received-intensity signals over range bins (Algorithm 1 path).

    For every beam, every kernel cell's pixel contributes
    intensity * kernel weight, divided uniformly across the bins its range
    interval intersects. Kernel cells outside the image and sky pixels
    contribute zero. Beams are independent, so the result does not depend
    on the worker count.
    """
    if len(pattern) == 0:
        raise ValueError("pattern must contain at least one beam")
    kernel = prepare_kernel(kernel, gbuffer.projection)
    lo, hi = _range_bin_maps(gbuffer, config)
    rho = np.ascontiguousarray(gbuffer.intensity, dtype=np.float64)
    ker = np.ascontiguousarray(kernel.values, dtype=np.float64)
    lo = np.ascontiguousarray(lo)
    hi = np.ascontiguousarray(hi)
    H, W = rho.shape
    kh, kw = ker.shape
    s_max = config.s_max
    eta = np.zeros((len(pattern), s_max))
    proj = gbuffer.projection

    centers = []
    for b in pattern.beams:
        c = beam_pixel(b.beta, proj)
        if c is not None:
            u0, v0 = c
            # windows entirely off-image cannot contribute
            if -kw // 2 - 1 <= u0 <= W + kw // 2 and -kh // 2 - 1 <= v0 <= H + kh // 2:
                centers.append(c)
                continue
        centers.append(None)

    def do_beams(b0, b1):
        for k in range(b0, b1):
            if centers[k] is not None:
                u0, v0 = centers[k]
                backend.beam_accumulate(rho, lo, hi, ker, u0, v0, eta[k])

    nb = len(pattern)
    nw = min(backend.resolve_workers(workers), nb)
    if nw <= 1:
        do_beams(0, nb)
    else:
        bounds = np.linspace(0, nb, nw + 1).astype(int)
        with ThreadPoolExecutor(max_workers=nw) as pool:
            for f in [pool.submit(do_beams, int(bounds[i]), int(bounds[i + 1]))
                      for i in range(nw) if bounds[i] < bounds[i + 1]]:
                f.result()
    return [EchoSignal(eta=eta[k], delta_r=config.delta_r) for k in range(nb)]


def oracle_direct(gbuffer: GBuffer, kernel: AngularGrid, beam,
                  config: SimConfig) -> EchoSignal:
    """Brute-force reference for one beam: plain double loop over kernel
    cells and range bins, no precomputation, no shortcuts."""
    eta = np.zeros(config.s_max)
    proj = gbuffer.projection
    center = beam_pixel(beam.beta, proj)
    if center is None:
        return EchoSignal(eta=eta, delta_r=config.delta_r)
    u0, v0 = center
    ranges = gbuffer.ranges
    normals = gbuffer.normals
    rho = gbuffer.intensity
    H, W = ranges.shape
    kval = kernel.values
    kh, kw = kval.shape
    cy, cx = kh // 2, kw // 2
    s_max = config.s_max
    for j in range(kh):
        v = v0 + j - cy
        if v < 0 or v >= H:
            continue
        for i in range(kw):
            u = u0 + i - cx
            if u < 0 or u >= W:
                continue
            if not math.isfinite(ranges[v, u]):
                continue
            r0, r1, _ = pixel_range_interval(
                u, v, ranges, normals, proj, config.delta_r, config.r_max,
                mode=config.pixel_range_mode)
            s0 = math.floor(r0 / config.delta_r)
            if s0 >= s_max:
                continue
            s1 = min(math.floor(r1 / config.delta_r), s_max - 1)
            share = (rho[v, u] * kval[j, i]) / (s1 - s0 + 1)
            for s in range(s0, s1 + 1):
                eta[s] += share
    return EchoSignal(eta=eta, delta_r=config.delta_r)


def range_stacking(gbuffer: GBuffer, kernel, config: SimConfig,
                   workers: int | None = None,
                   skip_subthreshold: bool = True) -> StackResult:
    """Dominant-echo maps via per-slice convolution (Algorithm 2 path).

    Point mode only: each pixel belongs to exactly one slice via
    floor(range / delta_r). Slices are visited far to near; wherever a
    slice's convolved response reaches rho_min it overwrites the stored
    echo, which realizes nearest-wins. In 'strongest' propagation the
    overwrite additionally requires strictly exceeding the stored intensity.
    Empty slices are always skipped; ``skip_subthreshold`` additionally
    skips slices whose best possible response (slice max x kernel sum) still
    falls short of rho_min, which cannot change the result.
    """
    if config.pixel_range_mode != "point":
        raise ValueError("range_stacking requires pixel_range_mode='point'")
    separable = isinstance(kernel, SeparableKernel)
    if separable:
        pitch = gbuffer.projection.center_pitch_rad
        if abs(kernel.step - pitch) > 1e-9 * pitch:
            raise ValueError("separable kernel step does not match the pixel "
                             "pitch; resample the 2D grid before separating")
        ksum = kernel.kernel_sum()
        h = kernel.h
        v = kernel.v
    else:
        kernel = prepare_kernel(kernel, gbuffer.projection)
        kval = np.ascontiguousarray(kernel.values, dtype=np.float64)
        ksum = float(kval.sum())

    rho = np.ascontiguousarray(gbuffer.intensity, dtype=np.float64)
    H, W = rho.shape
    s_max = config.s_max
    finite = np.isfinite(gbuffer.ranges)
    bins = np.where(finite, np.floor(
        np.where(finite, gbuffer.ranges, 0.0) / config.delta_r), -1)
    bins = np.where(bins < s_max, bins, -1).astype(np.int64)

    occupied = np.unique(bins[bins >= 0])
    slice_max = np.zeros(s_max)
    valid = bins >= 0
    np.maximum.at(slice_max, bins[valid], rho[valid])

    eta_nearest = np.zeros((H, W))
    s_nearest = np.full((H, W), s_max, dtype=np.int32)
    plan = None
    if not separable and backend.choose_conv_method(kval.shape) == "fft":
        plan = backend.fft_plan((H, W), kval)

    processed = 0
    skipped_sub = 0
    strongest = config.propagation == "strongest"
    for s in occupied[::-1]:
        s = int(s)
        if skip_subthreshold and slice_max[s] * ksum < config.rho_min:
            skipped_sub += 1
            continue
        slice_img = np.where(bins == s, rho, 0.0)
        if separable:
            conv = backend.correlate_separable(slice_img, h, v, workers=workers)
        else:
            conv = backend.correlate2d(slice_img, kval, workers=workers, plan=plan)
        backend.stack_update(conv, s, config.rho_min, strongest,
                             eta_nearest, s_nearest, workers=workers)
        processed += 1

    stats = SliceStats(total_bins=s_max, occupied=int(occupied.size),
                       processed=processed,
                       skipped_empty=s_max - int(occupied.size),
                       skipped_subthreshold=skipped_sub)
    return StackResult(s_nearest=s_nearest, eta_nearest=eta_nearest,
                       delta_r=config.delta_r, r_max=config.r_max, stats=stats)


def sample_beams(stack: StackResult, pattern: ScanPattern,
                 proj: PinholeProjection):
    """Read the dominant echo at each beam's pixel.

    Returns one (range, intensity) pair per beam, or None for beams outside
    the field of view or without a stored echo. Ranges are bin centers.
    """
    H, W = stack.s_nearest.shape
    s_max = stack.stats.total_bins
    out = []
    for b in pattern.beams:
        c = beam_pixel(b.beta, proj)
        if c is None:
            out.append(None)
            continue
        u0, v0 = c
        if not (0 <= u0 < W and 0 <= v0 < H):
            out.append(None)
            continue
        s = int(stack.s_nearest[v0, u0])
        if s >= s_max:
            out.append(None)
            continue
        out.append(((s + 0.5) * stack.delta_r, float(stack.eta_nearest[v0, u0])))
    return out
