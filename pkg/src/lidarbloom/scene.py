"""Analytic single-bounce raycaster producing G-buffers for test scenes.

Radiometry is relative throughout: the rendered intensity plane holds the
reflected intensity for a unit, isotropic emission source collocated with
the collector, with the per-pixel solid-angle weight already folded in so
both simulation algorithms consume identical inputs. The ambient plane
holds the same single-bounce response for the (optional) sun, acting as the
noise floor.

BRDF vector conventions: ``incident`` points along the light propagation
(source toward surface), ``outgoing`` from the surface toward the receiver;
the exact retro direction is the reversed incident vector.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from .geometry import (ClipPlanes, PinholeProjection, pixel_solid_angle,
                       pixel_to_direction, quantize_unit_vectors,
                       zbuffer_decode, zbuffer_encode)

_T_MIN = 1e-9  # intersections closer than this are treated as self-hits


@dataclass(frozen=True)
class Material:
    """Diffuse + retroreflective surface.

    The diffuse component albedo/pi never exceeds 1/pi; real road
    retroreflectors peak at 100..1000 sr^-1, which is what makes them about
    three orders of magnitude brighter than any diffuse surface from the
    sensor's point of view. The retro lobe is a Gaussian in the angle off
    the exact retro direction (the drop-off shape itself is a modeling
    choice; a Gaussian keeps closed-form tests possible).
    """

    albedo: float = 1.0
    retro_peak: float = 0.0
    retro_sigma: float = math.radians(0.2)

    def __post_init__(self):
        if not (0.0 <= self.albedo <= 1.0):
            raise ValueError("albedo must lie in [0, 1]")
        if self.retro_peak < 0.0:
            raise ValueError("retro_peak must be nonnegative")
        if self.retro_peak > 0.0 and self.retro_sigma <= 0.0:
            raise ValueError("retro_sigma must be positive when retro_peak > 0")


def brdf_eval(m: Material, incident, outgoing, normal):
    """BRDF value (sr^-1) for unit vectors; zero below the hemisphere."""
    incident = np.asarray(incident, dtype=float)
    outgoing = np.asarray(outgoing, dtype=float)
    normal = np.asarray(normal, dtype=float)
    ci = -np.sum(incident * normal, axis=-1)   # light must hit the front face
    co = np.sum(outgoing * normal, axis=-1)    # receiver must see the front face
    cos_alpha = np.clip(-np.sum(outgoing * incident, axis=-1), -1.0, 1.0)
    alpha = np.arccos(cos_alpha)
    value = m.albedo / math.pi
    if m.retro_peak > 0.0:
        value = value + m.retro_peak * np.exp(-0.5 * (alpha / m.retro_sigma) ** 2)
    value = np.where((ci > 0) & (co > 0), value, 0.0)
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class Plane:
    """Infinite plane through ``point`` with unit ``normal``."""

    point: np.ndarray
    normal: np.ndarray
    material: Material

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        n = np.asarray(self.normal, dtype=float)
        nn = np.linalg.norm(n)
        if nn == 0:
            raise ValueError("plane normal must be nonzero")
        object.__setattr__(self, "normal", n / nn)

    def intersect_batch(self, origin, dirs):
        denom = dirs @ self.normal
        num = (self.point - origin) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-300, num / denom, np.inf)
        t = np.where(t > _T_MIN, t, np.inf)
        normals = np.broadcast_to(self.normal, dirs.shape)
        return t, normals


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    material: Material

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def intersect_batch(self, origin, dirs):
        oc = origin - self.center
        b = dirs @ oc
        c0 = float(oc @ oc) - self.radius * self.radius
        disc = b * b - c0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t_near = -b - sq
        t_far = -b + sq
        t = np.where(t_near > _T_MIN, t_near, t_far)
        t = np.where((disc >= 0.0) & (t > _T_MIN), t, np.inf)
        finite = np.isfinite(t)
        hits = origin + dirs * np.where(finite, t, 0.0)[..., None]
        normals = np.where(finite[..., None], (hits - self.center) / self.radius, 0.0)
        return t, normals


_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class Quad:
    """Axis-aligned rectangle: normal along ``axis``; half_width spans the
    lower-indexed remaining axis, half_height the higher-indexed one."""

    center: np.ndarray
    axis: str
    half_width: float
    half_height: float
    material: Material

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.axis not in _AXES:
            raise ValueError(f"quad axis must be one of x/y/z, got {self.axis!r}")
        if self.half_width <= 0 or self.half_height <= 0:
            raise ValueError("quad half sizes must be positive")

    def intersect_batch(self, origin, dirs):
        k = _AXES[self.axis]
        a1, a2 = [a for a in range(3) if a != k]
        normal = np.zeros(3)
        normal[k] = 1.0
        denom = dirs[..., k]
        num = self.center[k] - origin[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-300, num / denom, np.inf)
        t = np.where(t > _T_MIN, t, np.inf)
        p1 = origin[a1] + dirs[..., a1] * t
        p2 = origin[a2] + dirs[..., a2] * t
        inside = (np.abs(p1 - self.center[a1]) <= self.half_width) & \
                 (np.abs(p2 - self.center[a2]) <= self.half_height)
        t = np.where(inside, t, np.inf)
        normals = np.broadcast_to(normal, dirs.shape)
        return t, normals


@dataclass(frozen=True)
class AmbientLight:
    """Distant source (e.g. the sun): unit direction toward it, irradiance
    in the same relative units as everything else."""

    direction: np.ndarray
    irradiance: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("ambient direction must be nonzero")
        object.__setattr__(self, "direction", d / n)
        if self.irradiance < 0:
            raise ValueError("ambient irradiance must be nonnegative")


@dataclass(frozen=True)
class Scene:
    primitives: tuple = field(default_factory=tuple)
    ambient: AmbientLight | None = None

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def trace(self, origin, dirs):
        """Nearest hit over all primitives for a batch of unit directions.

        Returns (t, normals, prim_idx); misses have t = +inf, prim_idx = -1.
        Ties are broken by primitive order (strictly-closer wins, so the
        first-listed primitive keeps exact ties). Normals are flipped to
        face the ray origin.
        """
        dirs = np.asarray(dirs, dtype=float)
        origin = np.asarray(origin, dtype=float)
        shape = dirs.shape[:-1]
        best_t = np.full(shape, np.inf)
        best_n = np.zeros(dirs.shape)
        best_i = np.full(shape, -1, dtype=np.int32)
        for idx, prim in enumerate(self.primitives):
            t, n = prim.intersect_batch(origin, dirs)
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            best_n = np.where(closer[..., None], n, best_n)
            best_i = np.where(closer, idx, best_i)
        # flip normals to oppose the ray
        flip = np.sum(best_n * dirs, axis=-1) > 0
        best_n = np.where(flip[..., None], -best_n, best_n)
        return best_t, best_n, best_i


@dataclass(frozen=True)
class HitRecord:
    range: float
    normal: np.ndarray
    material: Material
    primitive_index: int


def raycast(scene: Scene, origin, direction) -> HitRecord | None:
    """Nearest intersection of a single ray, or None on miss."""
    direction = np.asarray(direction, dtype=float)
    t, n, i = scene.trace(np.asarray(origin, dtype=float), direction[None, :])
    if i[0] < 0:
        return None
    return HitRecord(range=float(t[0]), normal=n[0],
                     material=scene.primitives[int(i[0])].material,
                     primitive_index=int(i[0]))


@dataclass(frozen=True)
class GBuffer:
    """Aligned per-pixel planes plus projection/quantization metadata.

    intensity: solid-angle-weighted reflected intensity for the unit source;
    ranges: Euclidean range along the pixel-center ray (+inf for sky);
    normals: unit surface normals (zero for sky); ambient: noise-floor
    intensity.
    """

    intensity: np.ndarray
    ranges: np.ndarray
    normals: np.ndarray
    ambient: np.ndarray
    projection: PinholeProjection
    clip: ClipPlanes | None = None
    normal_bits: int | None = None

    def __post_init__(self):
        shape = self.intensity.shape
        if (self.ranges.shape != shape or self.ambient.shape != shape
                or self.normals.shape != shape + (3,)):
            raise ValueError("G-buffer planes must share dimensions")
        if shape != (self.projection.height_px, self.projection.width_px):
            raise ValueError("G-buffer planes must match the projection size")
        if np.any(self.intensity < 0):
            raise ValueError("intensities must be nonnegative")
        finite = np.isfinite(self.ranges)
        if np.any(self.ranges[finite] <= 0):
            raise ValueError("finite ranges must be positive")

    @property
    def shape(self):
        return self.intensity.shape


@dataclass(frozen=True)
class RenderOptions:
    workers: int | None = None
    supersample: int = 1          # oracle generation only; center ray otherwise
    quantize_ranges: bool = True  # apply z-buffer quantization when clip present
    normal_bits: int | None = None


def render_gbuffer(scene: Scene, proj: PinholeProjection,
                   options: RenderOptions = RenderOptions(),
                   clip: ClipPlanes | None = None) -> GBuffer:
    """Render all G-buffer planes by casting one center ray per pixel.

    Rows are partitioned across worker threads; every plane value depends
    only on its own pixel, so results are independent of the worker count.
    """
    H, W = proj.height_px, proj.width_px
    intensity = np.zeros((H, W))
    ranges = np.full((H, W), np.inf)
    normals = np.zeros((H, W, 3))
    amb = np.zeros((H, W))
    origin = np.zeros(3)

    def do_rows(y0, y1):
        ys = np.arange(y0, y1)
        xs = np.arange(W)
        px = np.stack(np.meshgrid(xs + 0.5, ys + 0.5, indexing="xy"), axis=-1)
        dirs = pixel_to_direction(px, proj)
        omega = pixel_solid_angle(px, proj)
        t, n, idx = scene.trace(origin, dirs)
        hit = idx >= 0
        ranges[y0:y1] = t
        normals[y0:y1] = n
        if not np.any(hit):
            return
        albedo = np.zeros_like(t)
        retro_peak = np.zeros_like(t)
        retro_sigma = np.ones_like(t)
        for k, prim in enumerate(scene.primitives):
            sel = idx == k
            albedo[sel] = prim.material.albedo
            retro_peak[sel] = prim.material.retro_peak
            retro_sigma[sel] = prim.material.retro_sigma
        ci = np.clip(-np.sum(dirs * n, axis=-1), 0.0, 1.0)
        rho = np.where(hit,
                       (albedo / math.pi + retro_peak) * ci
                       / np.where(hit, t, 1.0) ** 2 * omega,
                       0.0)
        intensity[y0:y1] = rho
        if scene.ambient is not None and scene.ambient.irradiance > 0:
            sun = scene.ambient.direction
            cos_sun = np.clip(np.sum(n * sun, axis=-1), 0.0, 1.0)
            cos_alpha = np.clip(-np.sum(dirs * sun, axis=-1), -1.0, 1.0)
            alpha = np.arccos(cos_alpha)
            lobe = retro_peak * np.exp(-0.5 * (alpha / retro_sigma) ** 2)
            amb[y0:y1] = np.where(
                hit, (albedo / math.pi + lobe) * scene.ambient.irradiance
                * cos_sun * omega, 0.0)

    if options.supersample > 1:
        _render_supersampled(scene, proj, options.supersample,
                             intensity, ranges, normals, amb)
    else:
        workers = min(_resolve_workers(options.workers), H)
        if workers <= 1:
            do_rows(0, H)
        else:
            bounds = np.linspace(0, H, workers + 1).astype(int)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for f in [pool.submit(do_rows, int(bounds[k]), int(bounds[k + 1]))
                          for k in range(workers) if bounds[k] < bounds[k + 1]]:
                    f.result()

    used_clip = None
    if clip is not None and options.quantize_ranges:
        ys, xs = np.mgrid[0:H, 0:W]
        px = np.stack([xs + 0.5, ys + 0.5], axis=-1)
        dz = pixel_to_direction(px, proj)[..., 2]
        finite = np.isfinite(ranges)
        z = np.where(finite, ranges * dz, clip.near)
        codes, _ = zbuffer_encode(z, clip)
        zq = zbuffer_decode(codes, clip)
        ranges = np.where(finite, zq / dz, np.inf)
        used_clip = clip
    if options.normal_bits is not None:
        finite = np.isfinite(ranges)
        q = quantize_unit_vectors(normals, options.normal_bits)
        normals = np.where(finite[..., None], q, 0.0)
    return GBuffer(intensity=intensity, ranges=ranges, normals=normals,
                   ambient=amb, projection=proj, clip=used_clip,
                   normal_bits=options.normal_bits)


def _render_supersampled(scene, proj, ss, intensity, ranges, normals, amb):
    # averages intensity/ambient over an ss x ss subpixel grid; range and
    # normal stay center-ray samples (matching the rasterization error model)
    base = render_gbuffer(scene, proj, RenderOptions(workers=1, supersample=1))
    ranges[:] = base.ranges
    normals[:] = base.normals
    H, W = ranges.shape
    origin = np.zeros(3)
    acc_i = np.zeros((H, W))
    acc_a = np.zeros((H, W))
    offsets = (np.arange(ss) + 0.5) / ss
    for oy in offsets:
        for ox in offsets:
            ys, xs = np.mgrid[0:H, 0:W]
            px = np.stack([xs + ox, ys + oy], axis=-1)
            dirs = pixel_to_direction(px, proj)
            omega = pixel_solid_angle(px, proj)
            t, n, idx = scene.trace(origin, dirs)
            hit = idx >= 0
            albedo = np.zeros_like(t)
            retro_peak = np.zeros_like(t)
            retro_sigma = np.ones_like(t)
            for k, prim in enumerate(scene.primitives):
                sel = idx == k
                albedo[sel] = prim.material.albedo
                retro_peak[sel] = prim.material.retro_peak
                retro_sigma[sel] = prim.material.retro_sigma
            ci = np.clip(-np.sum(dirs * n, axis=-1), 0.0, 1.0)
            acc_i += np.where(hit, (albedo / math.pi + retro_peak) * ci
                              / np.where(hit, t, 1.0) ** 2 * omega, 0.0)
            if scene.ambient is not None and scene.ambient.irradiance > 0:
                sun = scene.ambient.direction
                cos_sun = np.clip(np.sum(n * sun, axis=-1), 0.0, 1.0)
                alpha = np.arccos(np.clip(-np.sum(dirs * sun, axis=-1), -1.0, 1.0))
                lobe = retro_peak * np.exp(-0.5 * (alpha / retro_sigma) ** 2)
                acc_a += np.where(hit, (albedo / math.pi + lobe)
                                  * scene.ambient.irradiance * cos_sun * omega, 0.0)
    intensity[:] = acc_i / (ss * ss)
    amb[:] = acc_a / (ss * ss)


def _resolve_workers(workers):
    from .backend import resolve_workers
    return resolve_workers(workers)


# ---------------------------------------------------------------------------
# Scene description files (YAML; schema documented in the README)
# ---------------------------------------------------------------------------

def _parse_material(spec: dict) -> Material:
    sigma = spec.get("retro_sigma_deg")
    return Material(
        albedo=float(spec.get("albedo", 1.0)),
        retro_peak=float(spec.get("retro_peak", 0.0)),
        retro_sigma=math.radians(float(sigma)) if sigma is not None
        else math.radians(0.2),
    )


def _parse_projection(spec: dict) -> PinholeProjection:
    width = int(spec["width"])
    height = int(spec["height"])
    if "hfov_deg" in spec:
        proj = PinholeProjection.from_hfov(width, height,
                                           math.radians(float(spec["hfov_deg"])))
        if "cx" in spec or "cy" in spec:
            proj = PinholeProjection(width, height, proj.focal_px,
                                     float(spec.get("cx", width / 2)),
                                     float(spec.get("cy", height / 2)))
        return proj
    return PinholeProjection(width, height, float(spec["focal_px"]),
                             float(spec.get("cx", width / 2)),
                             float(spec.get("cy", height / 2)))


def _parse_clip(spec: dict | None) -> ClipPlanes | None:
    if spec is None:
        return None
    return ClipPlanes(near=float(spec["near"]), far=float(spec["far"]),
                      bit_depth=int(spec.get("bits", 24)))


def load_scene(path):
    """Load a scene description file.

    Returns (scene, projection, clip) where clip is None unless the file
    declares clipping planes (which enable z-buffer range quantization).
    """
    with open(path, "r", encoding="utf-8") as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: scene file must be a mapping")
    try:
        materials = {name: _parse_material(spec)
                     for name, spec in (doc.get("materials") or {}).items()}
        prims = []
        for k, p in enumerate(doc.get("primitives") or []):
            kind = p.get("type")
            mat_name = p.get("material")
            if mat_name not in materials:
                raise ValueError(f"primitive {k}: unknown material {mat_name!r}")
            mat = materials[mat_name]
            if kind == "plane":
                prims.append(Plane(point=p["point"], normal=p["normal"], material=mat))
            elif kind == "sphere":
                prims.append(Sphere(center=p["center"], radius=float(p["radius"]),
                                    material=mat))
            elif kind == "quad":
                prims.append(Quad(center=p["center"], axis=str(p.get("axis", "z")),
                                  half_width=float(p["half_width"]),
                                  half_height=float(p["half_height"]), material=mat))
            else:
                raise ValueError(f"primitive {k}: unknown type {kind!r}")
        ambient = None
        if "ambient" in doc and doc["ambient"] is not None:
            ambient = AmbientLight(direction=doc["ambient"]["direction"],
                                   irradiance=float(doc["ambient"]["irradiance"]))
        scene = Scene(primitives=tuple(prims), ambient=ambient)
        proj = _parse_projection(doc["projection"])
        clip = _parse_clip(doc.get("clip"))
    except KeyError as exc:
        raise ValueError(f"{path}: missing required key {exc}") from None
    return scene, proj, clip
