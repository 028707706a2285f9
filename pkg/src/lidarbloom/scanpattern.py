"""Scan patterns: the ordered set of beams and their central angles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import SphericalAngle


@dataclass(frozen=True)
class Beam:
    id: int
    beta: SphericalAngle

    def direction(self) -> np.ndarray:
        return self.beta.to_direction()


@dataclass(frozen=True)
class ScanPattern:
    """Ordered beams; the order defines the output point order.

    Beams carry no per-beam intensity scale (all beams share the same
    intensity); a scale field is reserved for sensors with per-diode
    variation but fixed at 1 here.
    """

    beams: tuple = field(default_factory=tuple)

    def __post_init__(self):
        ids = [b.id for b in self.beams]
        if len(set(ids)) != len(ids):
            raise ValueError("beam ids must be unique within a pattern")
        object.__setattr__(self, "beams", tuple(self.beams))

    def __len__(self):
        return len(self.beams)

    def directions(self) -> np.ndarray:
        """(B, 3) unit direction per beam, in pattern order."""
        if not self.beams:
            return np.zeros((0, 3))
        return np.stack([b.direction() for b in self.beams])


def grid_pattern(h_fov: float, v_fov: float, nh: int, nv: int) -> ScanPattern:
    """Uniform nh x nv angular grid centered on the optical axis (row-major).

    Beams span [-fov/2, +fov/2] inclusive along each axis; a single beam
    sits on the axis. Angles are tangent-plane (camera-aligned) offsets.
    """
    if h_fov <= 0 or v_fov <= 0:
        raise ValueError("fields of view must be positive")
    if nh < 1 or nv < 1:
        raise ValueError("beam counts must be at least 1")
    hs = np.linspace(-h_fov / 2, h_fov / 2, nh) if nh > 1 else np.zeros(1)
    vs = np.linspace(-v_fov / 2, v_fov / 2, nv) if nv > 1 else np.zeros(1)
    beams = []
    for row, b in enumerate(vs):
        for col, a in enumerate(hs):
            d = np.array([math.tan(a), math.tan(b), 1.0])
            d /= np.linalg.norm(d)
            beams.append(Beam(id=row * nh + col, beta=SphericalAngle.from_direction(d)))
    return ScanPattern(beams=tuple(beams))


def save_pattern(pattern: ScanPattern, path) -> None:
    """Write a pattern as CSV (id, phi_deg, theta_deg); degrees in files,
    radians in memory."""
    with open(path, "w", encoding="ascii") as f:
        f.write("id,phi_deg,theta_deg\n")
        for b in pattern.beams:
            f.write(f"{b.id},{math.degrees(b.beta.phi):.17g},"
                    f"{math.degrees(b.beta.theta):.17g}\n")


def load_pattern(path) -> ScanPattern:
    beams = []
    seen = set()
    with open(path, "r", encoding="ascii") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty pattern file")
    if lines[0].lower().replace(" ", "") != "id,phi_deg,theta_deg":
        raise ValueError(f"{path}:1: expected header 'id,phi_deg,theta_deg'")
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        try:
            bid = int(parts[0])
            phi = math.radians(float(parts[1]))
            theta = math.radians(float(parts[2]))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if bid in seen:
            raise ValueError(f"{path}:{lineno}: duplicate beam id {bid}")
        seen.add(bid)
        beams.append(Beam(id=bid, beta=SphericalAngle(phi=phi, theta=theta)))
    if not beams:
        raise ValueError(f"{path}: pattern has no beams")
    return ScanPattern(beams=tuple(beams))
