import math

import numpy as np
import pytest

from lidarbloom.geometry import PinholeProjection
from lidarbloom.scene import GBuffer


def make_projection(width=32, height=32, pitch_deg=0.1):
    """Projection whose center pixel pitch is exactly pitch_deg."""
    return PinholeProjection(width, height,
                             focal_px=1.0 / math.radians(pitch_deg),
                             cx=width / 2.0, cy=height / 2.0)


def random_gbuffer(rng, width=32, height=32, pitch_deg=0.1, sky_fraction=0.1,
                   r_lo=5.0, r_hi=45.0):
    """Random but valid G-buffer: positive intensities, unit normals,
    a sprinkle of sky pixels."""
    proj = make_projection(width, height, pitch_deg)
    intensity = rng.random((height, width))
    ranges = rng.uniform(r_lo, r_hi, (height, width))
    if sky_fraction > 0:
        sky = rng.random((height, width)) < sky_fraction
        ranges = np.where(sky, np.inf, ranges)
        intensity = np.where(sky, 0.0, intensity)
    normals = rng.normal(size=(height, width, 3))
    # keep normals facing the sensor so extent-mode extrapolation stays sane
    normals[..., 2] = -np.abs(normals[..., 2]) - 0.2
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    return GBuffer(intensity=intensity, ranges=ranges, normals=normals,
                   ambient=np.zeros((height, width)), projection=proj)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
