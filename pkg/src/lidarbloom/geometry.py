"""Projective and angular geometry shared by the whole pipeline.

Conventions used throughout the package:

* Sensor/camera frame: x right, y down, z forward along the optical axis.
* Continuous pixel coordinates (x, y) in pixels; integer pixel (i, j)
  covers [i, i+1) x [j, j+1), so its center is (i + 0.5, j + 0.5).
  The principal point maps exactly onto the optical axis.
* Spherical angles: ``phi`` is the azimuth in [-pi, pi), ``theta`` the
  polar angle from the optical axis in [0, pi].

All functions accept scalars or NumPy arrays (broadcasting) and are pure,
so they are safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this |ray . normal| the normals-based range extrapolation amplifies
# normal noise unboundedly, so the correction is refused.
EPS_PARALLEL = 1e-4


@dataclass(frozen=True)
class SphericalAngle:
    """Direction as (azimuth phi, polar angle theta), both in radians."""

    phi: float
    theta: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= np.pi):
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")
        if not (-np.pi <= self.phi < np.pi):
            raise ValueError(f"phi must lie in [-pi, pi), got {self.phi}")

    def to_direction(self) -> np.ndarray:
        """Unit vector (x, y, z) with theta measured from the +z axis."""
        st = np.sin(self.theta)
        return np.array(
            [st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)]
        )

    @staticmethod
    def from_direction(v) -> "SphericalAngle":
        v = np.asarray(v, dtype=float)
        n = np.linalg.norm(v)
        if n == 0.0:
            raise ValueError("zero vector has no direction")
        x, y, z = v / n
        theta = float(np.arccos(np.clip(z, -1.0, 1.0)))
        phi = float(np.arctan2(y, x))
        if phi >= np.pi:  # arctan2 may return +pi exactly
            phi -= 2.0 * np.pi
        return SphericalAngle(phi=phi, theta=theta)


@dataclass(frozen=True)
class PinholeProjection:
    """Pinhole camera intrinsics in pixel units."""

    width_px: int
    height_px: int
    focal_px: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("image dimensions must be positive")
        if self.focal_px <= 0:
            raise ValueError("focal_px must be positive")
        if not (0.0 <= self.cx <= self.width_px and 0.0 <= self.cy <= self.height_px):
            raise ValueError("principal point must lie inside image bounds")

    @staticmethod
    def from_hfov(width_px: int, height_px: int, hfov_rad: float) -> "PinholeProjection":
        """Projection with the given horizontal field of view, centered principal point."""
        if not (0.0 < hfov_rad < np.pi):
            raise ValueError("hfov must lie in (0, pi)")
        focal = 0.5 * width_px / np.tan(0.5 * hfov_rad)
        return PinholeProjection(width_px, height_px, focal, width_px / 2.0, height_px / 2.0)

    @property
    def center_pitch_rad(self) -> float:
        """Angular width of one pixel at the image center (small-angle)."""
        return 1.0 / self.focal_px


@dataclass(frozen=True)
class ClipPlanes:
    """Near/far clipping planes and depth-buffer bit depth."""

    near: float
    far: float
    bit_depth: int = 24

    def __post_init__(self):
        if not (0.0 < self.near < self.far):
            raise ValueError("require 0 < near < far")
        if self.bit_depth not in (16, 24, 32):
            raise ValueError("bit_depth must be one of 16, 24, 32")

    @property
    def max_code(self) -> int:
        return (1 << self.bit_depth) - 1


def pixel_to_direction(p, proj: PinholeProjection) -> np.ndarray:
    """Unit direction through continuous pixel coordinates ``p = (x, y)``.

    ``p`` may be a pair or an array of shape (..., 2). Out-of-bounds pixels
    raise ValueError.
    """
    p = np.asarray(p, dtype=float)
    x, y = p[..., 0], p[..., 1]
    if np.any(x < 0) or np.any(x > proj.width_px) or np.any(y < 0) or np.any(y > proj.height_px):
        raise ValueError(f"pixel coordinates outside image bounds "
                         f"{proj.width_px}x{proj.height_px}")
    dx = (x - proj.cx) / proj.focal_px
    dy = (y - proj.cy) / proj.focal_px
    d = np.stack([dx, dy, np.ones_like(dx)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def direction_to_pixel(v, proj: PinholeProjection) -> np.ndarray:
    """Continuous pixel coordinates of unit direction(s) ``v``.

    Inverse of :func:`pixel_to_direction`. Directions with non-positive z
    (behind the image plane) raise ValueError.
    """
    v = np.asarray(v, dtype=float)
    z = v[..., 2]
    if np.any(z <= 0):
        raise ValueError("direction has no positive component along the optical axis")
    x = proj.focal_px * v[..., 0] / z + proj.cx
    y = proj.focal_px * v[..., 1] / z + proj.cy
    return np.stack([x, y], axis=-1)


def pixel_solid_angle(p, proj: PinholeProjection):
    """Solid angle (sr) of the 1 px x 1 px footprint centered at ``p``.

    Closed small-angle form f / (dx^2 + dy^2 + f^2)^(3/2), i.e. the on-axis
    value 1/f^2 falling off as cos^3 of the off-axis angle. Validated against
    numerical integration of the exact footprint integral in the tests.
    """
    p = np.asarray(p, dtype=float)
    x, y = p[..., 0], p[..., 1]
    if np.any(x < 0) or np.any(x > proj.width_px) or np.any(y < 0) or np.any(y > proj.height_px):
        raise ValueError("pixel coordinates outside image bounds")
    f = proj.focal_px
    dx = x - proj.cx
    dy = y - proj.cy
    return f / np.power(dx * dx + dy * dy + f * f, 1.5)


def zbuffer_encode(z, clip: ClipPlanes):
    """Quantize depth(s) ``z`` into integer codes.

    The code scale is reciprocal in z: code 0 at the near plane, the maximum
    code at the far plane, rounding to the nearest code. Returns
    ``(codes, clipped)`` where ``clipped`` marks inputs outside [near, far]
    (their codes are clamped to the valid range).
    """
    z = np.asarray(z, dtype=float)
    clipped = (z < clip.near) | (z > clip.far)
    zc = np.clip(z, clip.near, clip.far)
    t = (1.0 / zc - 1.0 / clip.near) / (1.0 / clip.far - 1.0 / clip.near)
    code = np.rint(t * clip.max_code)
    code = np.clip(code, 0, clip.max_code).astype(np.int64)
    if code.ndim == 0:
        return int(code), bool(clipped)
    return code, clipped


def zbuffer_decode(code, clip: ClipPlanes):
    """Depth at the reciprocal-space point of integer code(s); inverse of encode."""
    code = np.asarray(code)
    if np.any(code < 0) or np.any(code > clip.max_code):
        raise ValueError(f"code outside [0, {clip.max_code}]")
    t = code.astype(float) / clip.max_code
    inv = 1.0 / clip.near + t * (1.0 / clip.far - 1.0 / clip.near)
    z = 1.0 / inv
    return float(z) if z.ndim == 0 else z


def zbuffer_step(z, clip: ClipPlanes):
    """Linearized local quantization step dz ~ z^2 (1/near - 1/far) / 2^bits.

    Only meaningful while the step stays small against z itself; near the
    degenerate regime the true decode error is bounded by
    |dz| <= 0.5 (1/near - 1/far)/max_code * z * z' instead.
    """
    z = np.asarray(z, dtype=float)
    return z * z * (1.0 / clip.near - 1.0 / clip.far) * 2.0 ** (-clip.bit_depth)


def normals_range_correction(p, v, n, r, eps_parallel: float = EPS_PARALLEL):
    """Extrapolate the range ``r`` sampled at pixel-center direction ``p``
    to the true ray direction ``v`` using the surface normal ``n``.

    r_corr = (p.n)/(v.n) * r, exact for planar surfaces. Rays grazing the
    surface (|v.n| < eps_parallel) are refused: the raw range is returned
    with a False flag. Returns ``(r_corr, corrected)``.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("range must be positive")
    pn = np.sum(p * n, axis=-1)
    vn = np.sum(v * n, axis=-1)
    ok = np.abs(vn) >= eps_parallel
    safe_vn = np.where(ok, vn, 1.0)
    r_corr = np.where(ok, pn / safe_vn * r, r)
    if r_corr.ndim == 0:
        return float(r_corr), bool(ok)
    return r_corr, ok


def quantize_unit_vectors(v, bits: int) -> np.ndarray:
    """Quantize each component of unit vector(s) to ``bits`` levels over [-1, 1]
    and renormalize. Used to reproduce the limited normal precision of
    real-time renderers (10-bit normals are a common case)."""
    if bits < 2:
        raise ValueError("need at least 2 bits per component")
    v = np.asarray(v, dtype=float)
    levels = (1 << bits) - 1
    q = np.rint((v + 1.0) * 0.5 * levels) / levels * 2.0 - 1.0
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    norm = np.where(norm == 0.0, 1.0, norm)
    return q / norm
