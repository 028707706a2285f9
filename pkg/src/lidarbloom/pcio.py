"""Point cloud assembly and file I/O (CSV, PLY, G-buffer container, SVG plots).

All writers are deterministic: fixed field ordering, 17-significant-digit
floats (which round-trip doubles exactly) and no timestamps, so identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ClipPlanes, PinholeProjection
from .scanpattern import ScanPattern
from .scene import GBuffer

CSV_HEADER = "beam_id,phi_deg,theta_deg,range,x,y,z,intensity,epw,echo_idx"

GBUFFER_VERSION = 1
_PLANE_ORDER = ("intensity", "range", "ambient", "nx", "ny", "nz")


class GBufferFormatError(ValueError):
    """Malformed G-buffer container."""


@dataclass
class PointCloud:
    """Detected echoes as flat parallel arrays plus frame metadata."""

    beam_id: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    range: np.ndarray
    xyz: np.ndarray
    intensity: np.ndarray
    epw: np.ndarray
    echo_idx: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.beam_id.size

    @staticmethod
    def empty(meta: dict | None = None) -> "PointCloud":
        return PointCloud(
            beam_id=np.zeros(0, dtype=np.int64), phi=np.zeros(0),
            theta=np.zeros(0), range=np.zeros(0), xyz=np.zeros((0, 3)),
            intensity=np.zeros(0), epw=np.zeros(0),
            echo_idx=np.zeros(0, dtype=np.int32), meta=dict(meta or {}))


def to_points(pattern: ScanPattern, per_beam_echoes, meta: dict | None = None) -> PointCloud:
    """Assemble a cloud from per-beam echo records.

    ``per_beam_echoes[k]`` lists (range, intensity, epw, echo_index) tuples
    for beam k, in pattern order; beams with no echoes are omitted (raydrop).
    Cartesian coordinates follow the beam direction scaled by range.
    """
    if len(per_beam_echoes) != len(pattern):
        raise ValueError("need one echo list per beam")
    rows = []
    for b, echoes in zip(pattern.beams, per_beam_echoes):
        if not echoes:
            continue
        d = b.direction()
        for (rng, inten, epw, idx) in echoes:
            rows.append((b.id, b.beta.phi, b.beta.theta, rng,
                         d[0] * rng, d[1] * rng, d[2] * rng, inten, epw, idx))
    if not rows:
        return PointCloud.empty(meta)
    a = np.array(rows, dtype=np.float64)
    return PointCloud(
        beam_id=a[:, 0].astype(np.int64), phi=a[:, 1], theta=a[:, 2],
        range=a[:, 3], xyz=a[:, 4:7].copy(), intensity=a[:, 7], epw=a[:, 8],
        echo_idx=a[:, 9].astype(np.int32), meta=dict(meta or {}))


def write_csv(cloud: PointCloud, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(CSV_HEADER + "\n")
        for k in range(len(cloud)):
            f.write(
                f"{cloud.beam_id[k]},{math.degrees(cloud.phi[k]):.17g},"
                f"{math.degrees(cloud.theta[k]):.17g},{cloud.range[k]:.17g},"
                f"{cloud.xyz[k, 0]:.17g},{cloud.xyz[k, 1]:.17g},"
                f"{cloud.xyz[k, 2]:.17g},{cloud.intensity[k]:.17g},"
                f"{cloud.epw[k]:.17g},{cloud.echo_idx[k]}\n")


def read_csv(path) -> PointCloud:
    with open(path, "r", encoding="ascii") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: expected header '{CSV_HEADER}'")
    if len(lines) == 1:
        return PointCloud.empty()
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 10:
            raise ValueError(f"{path}:{lineno}: expected 10 fields")
        rows.append([float(p) for p in parts])
    a = np.array(rows)
    return PointCloud(
        beam_id=a[:, 0].astype(np.int64),
        phi=np.radians(a[:, 1]), theta=np.radians(a[:, 2]),
        range=a[:, 3], xyz=a[:, 4:7].copy(), intensity=a[:, 7], epw=a[:, 8],
        echo_idx=a[:, 9].astype(np.int32))


def write_ply(cloud: PointCloud, path) -> None:
    """ASCII PLY with x, y, z, intensity and epw vertex properties; frame
    metadata goes into comment lines (sorted for determinism)."""
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write("comment format_version=1\n")
        for key in sorted(cloud.meta):
            f.write(f"comment {key}={cloud.meta[key]}\n")
        f.write(f"element vertex {len(cloud)}\n")
        for prop in ("x", "y", "z", "intensity", "epw"):
            f.write(f"property double {prop}\n")
        f.write("end_header\n")
        for k in range(len(cloud)):
            f.write(f"{cloud.xyz[k, 0]:.17g} {cloud.xyz[k, 1]:.17g} "
                    f"{cloud.xyz[k, 2]:.17g} {cloud.intensity[k]:.17g} "
                    f"{cloud.epw[k]:.17g}\n")


# ---------------------------------------------------------------------------
# G-buffer container: text header, then raw little-endian planes (row-major)
# in the declared order. Ranges are stored as 64-bit floats while they are
# unquantized; once z-buffer quantization has been applied, 32 bits suffice
# and match renderer interchange conventions.
# ---------------------------------------------------------------------------

def write_gbuffer(gbuf: GBuffer, path) -> None:
    proj = gbuf.projection
    range_dtype = "f8" if gbuf.clip is None else "f4"
    header = [
        f"format_version={GBUFFER_VERSION}",
        f"width={proj.width_px}",
        f"height={proj.height_px}",
        f"focal_px={proj.focal_px:.17g}",
        f"cx={proj.cx:.17g}",
        f"cy={proj.cy:.17g}",
        f"range_dtype={range_dtype}",
    ]
    if gbuf.clip is not None:
        header += [f"near={gbuf.clip.near:.17g}", f"far={gbuf.clip.far:.17g}",
                   f"bits={gbuf.clip.bit_depth}"]
    if gbuf.normal_bits is not None:
        header.append(f"normal_bits={gbuf.normal_bits}")
    header.append("planes=" + ",".join(_PLANE_ORDER))
    planes = {
        "intensity": gbuf.intensity.astype("<f4"),
        "range": gbuf.ranges.astype("<" + range_dtype),
        "ambient": gbuf.ambient.astype("<f4"),
        "nx": gbuf.normals[..., 0].astype("<f4"),
        "ny": gbuf.normals[..., 1].astype("<f4"),
        "nz": gbuf.normals[..., 2].astype("<f4"),
    }
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\ndata\n").encode("ascii"))
        for name in _PLANE_ORDER:
            f.write(planes[name].tobytes())


def read_gbuffer(path) -> GBuffer:
    with open(path, "rb") as f:
        blob = f.read()
    marker = b"\ndata\n"
    pos = blob.find(marker)
    if pos < 0:
        raise GBufferFormatError(f"{path}: missing 'data' marker")
    headers = {}
    for line in blob[:pos].decode("ascii").splitlines():
        key, _, val = line.partition("=")
        if not _:
            raise GBufferFormatError(f"{path}: bad header line {line!r}")
        headers[key.strip()] = val.strip()
    try:
        if int(headers["format_version"]) != GBUFFER_VERSION:
            raise GBufferFormatError(
                f"{path}: unsupported format_version {headers['format_version']}")
        W = int(headers["width"])
        H = int(headers["height"])
        proj = PinholeProjection(W, H, float(headers["focal_px"]),
                                 float(headers["cx"]), float(headers["cy"]))
        range_dtype = headers.get("range_dtype", "f4")
        plane_names = headers["planes"].split(",")
    except KeyError as exc:
        raise GBufferFormatError(f"{path}: missing header key {exc}") from None
    if range_dtype not in ("f4", "f8"):
        raise GBufferFormatError(f"{path}: unknown range_dtype {range_dtype!r}")
    clip = None
    if "near" in headers:
        clip = ClipPlanes(near=float(headers["near"]), far=float(headers["far"]),
                          bit_depth=int(headers.get("bits", 24)))
    normal_bits = int(headers["normal_bits"]) if "normal_bits" in headers else None

    data = blob[pos + len(marker):]
    offset = 0
    planes = {}
    for name in plane_names:
        if name not in _PLANE_ORDER:
            raise GBufferFormatError(f"{path}: unknown plane name {name!r}")
        dtype = np.dtype("<" + (range_dtype if name == "range" else "f4"))
        nbytes = W * H * dtype.itemsize
        chunk = data[offset:offset + nbytes]
        if len(chunk) < nbytes:
            raise GBufferFormatError(
                f"{path}: truncated plane '{name}' (expected {nbytes} bytes, "
                f"got {len(chunk)})")
        planes[name] = np.frombuffer(chunk, dtype=dtype).reshape(H, W).astype(np.float64)
        offset += nbytes
    missing = [n for n in _PLANE_ORDER if n not in planes]
    if missing:
        raise GBufferFormatError(f"{path}: missing planes {missing}")
    normals = np.stack([planes["nx"], planes["ny"], planes["nz"]], axis=-1)
    return GBuffer(intensity=planes["intensity"], ranges=planes["range"],
                   normals=normals, ambient=planes["ambient"],
                   projection=proj, clip=clip, normal_bits=normal_bits)


# ---------------------------------------------------------------------------
# Deterministic SVG scatter plots
# ---------------------------------------------------------------------------

_VIRIDIS = (
    (68, 1, 84), (71, 45, 123), (59, 82, 139), (44, 114, 142),
    (33, 145, 140), (40, 174, 128), (94, 201, 98), (173, 220, 48),
    (253, 231, 37),
)

_CANVAS = 800
_MARGIN = 50


def _colormap(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    pos = t * (len(_VIRIDIS) - 1)
    k = min(int(pos), len(_VIRIDIS) - 2)
    f = pos - k
    rgb = [int(round(_VIRIDIS[k][c] * (1 - f) + _VIRIDIS[k + 1][c] * f))
           for c in range(3)]
    return f"#{rgb[0]:02x}{rgb[1]:02x}{rgb[2]:02x}"


def plot_svg(cloud: PointCloud, path, view: str = "bev",
             color_by: str = "epw") -> None:
    """Scatter plot of the cloud as an SVG file.

    view='bev' plots (x, z) with the sensor at the bottom; view='front'
    plots (x, -y) as seen from the sensor. Points are colored by 'epw',
    'intensity' or 'range'. Output bytes depend only on the cloud contents.
    """
    if view == "bev":
        us, ws = cloud.xyz[:, 0], cloud.xyz[:, 2]
        labels = ("x", "z")
    elif view == "front":
        us, ws = cloud.xyz[:, 0], -cloud.xyz[:, 1]
        labels = ("x", "-y")
    else:
        raise ValueError(f"unknown view {view!r}")
    values = {"epw": cloud.epw, "intensity": cloud.intensity,
              "range": cloud.range}.get(color_by)
    if values is None:
        raise ValueError(f"unknown color_by {color_by!r}")

    if len(cloud):
        u0, u1 = float(us.min()), float(us.max())
        w0, w1 = float(ws.min()), float(ws.max())
    else:
        u0 = w0 = -1.0
        u1 = w1 = 1.0
    du = max(u1 - u0, 1e-12)
    dw = max(w1 - w0, 1e-12)
    span = max(du, dw)  # equal aspect
    ucen, wcen = 0.5 * (u0 + u1), 0.5 * (w0 + w1)
    scale = (_CANVAS - 2 * _MARGIN) / span
    vmin = float(values.min()) if len(cloud) else 0.0
    vmax = float(values.max()) if len(cloud) else 1.0
    vspan = vmax - vmin

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_CANVAS}" '
        f'height="{_CANVAS}" viewBox="0 0 {_CANVAS} {_CANVAS}">',
        f'<rect width="{_CANVAS}" height="{_CANVAS}" fill="#101318"/>',
        f'<text x="{_MARGIN}" y="24" fill="#d0d0d0" font-family="monospace" '
        f'font-size="14">{view} / color: {color_by} '
        f'[{vmin:.6g}, {vmax:.6g}] / {len(cloud)} pts</text>',
        f'<text x="{_CANVAS - 30}" y="{_CANVAS - 12}" fill="#808080" '
        f'font-family="monospace" font-size="12">{labels[0]}</text>',
        f'<text x="12" y="{_MARGIN}" fill="#808080" font-family="monospace" '
        f'font-size="12">{labels[1]}</text>',
    ]
    for k in range(len(cloud)):
        cx = _CANVAS / 2 + (us[k] - ucen) * scale
        cy = _CANVAS / 2 - (ws[k] - wcen) * scale
        t = (values[k] - vmin) / vspan if vspan > 0 else 0.5
        parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="2.5" '
                     f'fill="{_colormap(float(t))}"/>')
    parts.append("</svg>\n")
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("\n".join(parts))


def plot_viewport_transform(cloud: PointCloud, view: str = "bev"):
    """The affine data->canvas mapping used by plot_svg (exposed for tests):
    returns (ucen, wcen, scale, canvas)."""
    if view == "bev":
        us, ws = cloud.xyz[:, 0], cloud.xyz[:, 2]
    else:
        us, ws = cloud.xyz[:, 0], -cloud.xyz[:, 1]
    if len(cloud):
        u0, u1 = float(us.min()), float(us.max())
        w0, w1 = float(ws.min()), float(ws.max())
    else:
        u0 = w0 = -1.0
        u1 = w1 = 1.0
    span = max(max(u1 - u0, 1e-12), max(w1 - w0, 1e-12))
    return (0.5 * (u0 + u1), 0.5 * (w0 + w1),
            (_CANVAS - 2 * _MARGIN) / span, _CANVAS)
