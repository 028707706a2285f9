"""Pulse convolution, threshold-crossing detection and echo pulse width.

Receivers with binary AD thresholds report the intervals during which the
pulse-convolved signal exceeds the threshold; the interval width (EPW)
serves as the surrogate for echo intensity. Ambient light raises the
effective threshold (T_eff = T + gain * ambient), the simplest monotone
stand-in for the sensor-internal ambient/threshold relationship, which is
not public.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .beamkernel import KernelFileError, _parse_grid_file
from .simulate import EchoSignal


@dataclass(frozen=True)
class PulseShape:
    """Emitted pulse over range offset, peak-normalized to 1.

    Either analytic (Gaussian with ``sigma_r`` in scene units) or a sampled
    profile with its sample step.
    """

    sigma_r: float | None = None
    samples: np.ndarray | None = None
    step: float | None = None
    extent_sigmas: float = 6.0

    def __post_init__(self):
        if (self.sigma_r is None) == (self.samples is None):
            raise ValueError("provide exactly one of sigma_r or samples")
        if self.sigma_r is not None and self.sigma_r <= 0:
            raise ValueError("sigma_r must be positive")
        if self.samples is not None:
            s = np.asarray(self.samples, dtype=np.float64)
            if s.ndim != 1 or s.size % 2 == 0:
                raise ValueError("sampled pulses must be odd-length 1D")
            if np.any(s < 0):
                raise ValueError("pulse samples must be nonnegative")
            peak = s.max()
            if peak <= 0:
                raise ValueError("pulse must not be all zero")
            object.__setattr__(self, "samples", s / peak)
            if self.step is None or self.step <= 0:
                raise ValueError("sampled pulses need a positive step")

    @staticmethod
    def gaussian(sigma_r: float, extent_sigmas: float = 6.0) -> "PulseShape":
        return PulseShape(sigma_r=sigma_r, extent_sigmas=extent_sigmas)

    @staticmethod
    def from_samples(samples, step: float) -> "PulseShape":
        return PulseShape(samples=np.asarray(samples, dtype=float), step=step)

    def sampled_at(self, delta_r: float) -> np.ndarray:
        """Centered odd-length sample vector at bin width ``delta_r``."""
        if self.samples is not None:
            if abs(self.step - delta_r) > 1e-12 * max(self.step, delta_r):
                raise ValueError(
                    f"pulse sampled at {self.step}, signal bins are {delta_r}")
            return self.samples
        n = int(math.ceil(self.extent_sigmas * self.sigma_r / delta_r))
        x = (np.arange(2 * n + 1) - n) * delta_r
        return np.exp(-0.5 * (x / self.sigma_r) ** 2)


@dataclass(frozen=True)
class DetectionConfig:
    threshold: float
    ambient_gain: float = 0.0

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.ambient_gain < 0:
            raise ValueError("ambient_gain must be nonnegative")


@dataclass(frozen=True)
class Echo:
    """One maximal above-threshold interval [r0, r1]."""

    r0: float
    r1: float
    peak: float
    index: int

    def __post_init__(self):
        if self.r1 < self.r0:
            raise ValueError("echo interval must have r0 <= r1")

    @property
    def epw(self) -> float:
        return self.r1 - self.r0

    @property
    def center(self) -> float:
        return 0.5 * (self.r0 + self.r1)


def convolve_pulse(signal: EchoSignal, pulse: PulseShape) -> EchoSignal:
    """Smoothed signal (pulse cross raw signal) with zero padding outside
    [0, r_max]; same bin grid as the input."""
    p = pulse.sampled_at(signal.delta_r)
    c = p.size // 2
    full = np.convolve(signal.eta, p)
    return EchoSignal(eta=full[c:c + signal.eta.size], delta_r=signal.delta_r)


def detect_echoes(signal: EchoSignal, cfg: DetectionConfig,
                  ambient: float = 0.0) -> list[Echo]:
    """All maximal intervals where the signal strictly exceeds the effective
    threshold, ordered by r0.

    Samples live at bin centers (s + 0.5) * delta_r; crossing points are
    linearly interpolated between neighboring samples, with virtual zero
    samples just outside the signal (the signal is zero outside [0, r_max]).
    Intervals separated by even a single sub-threshold bin stay separate
    (no hysteresis/merging).
    """
    t_eff = cfg.threshold + cfg.ambient_gain * ambient
    eta = signal.eta
    dr = signal.delta_r
    above = eta > t_eff
    if not np.any(above):
        return []
    padded = np.concatenate(([False], above, [False]))
    starts = np.nonzero(padded[1:] & ~padded[:-1])[0]
    ends = np.nonzero(~padded[1:] & padded[:-1])[0]  # exclusive
    echoes = []
    for idx, (a, b) in enumerate(zip(starts, ends)):
        last = b - 1
        y_a = eta[a]
        y_prev = eta[a - 1] if a > 0 else 0.0
        frac0 = (t_eff - y_prev) / (y_a - y_prev)
        r0 = max((a - 0.5 + frac0) * dr, 0.0)  # signal exists only for r >= 0
        y_l = eta[last]
        y_next = eta[last + 1] if last + 1 < eta.size else 0.0
        frac1 = (y_l - t_eff) / (y_l - y_next)
        r1 = (last + 0.5 + frac1) * dr
        echoes.append(Echo(r0=float(r0), r1=float(r1),
                           peak=float(eta[a:b].max()), index=idx))
    return echoes


def select_echo(echoes: list[Echo], policy: str) -> Echo | None:
    """Pick one echo: nearest (lowest r0), strongest (highest peak) or
    longest (largest EPW); ties go to the lower r0."""
    if not echoes:
        return None
    if policy == "nearest":
        return min(echoes, key=lambda e: e.r0)
    if policy == "strongest":
        return min(echoes, key=lambda e: (-e.peak, e.r0))
    if policy == "longest":
        return min(echoes, key=lambda e: (-e.epw, e.r0))
    raise ValueError(f"unknown echo selection policy {policy!r}")


def load_pulse(path) -> PulseShape:
    """Load a sampled pulse: the kernel grid text format with rows=1 and a
    ``step`` header in scene units."""
    values, step, step_key, _ = _parse_grid_file(path, step_keys=("step",))
    if values.shape[0] != 1:
        raise KernelFileError(f"{path}: pulse file must have rows=1")
    return PulseShape.from_samples(values[0], step=step)


def save_pulse(pulse: PulseShape, path, delta_r: float | None = None) -> None:
    if pulse.samples is not None:
        samples, step = pulse.samples, pulse.step
    else:
        if delta_r is None:
            raise ValueError("analytic pulses need delta_r to be sampled for saving")
        samples, step = pulse.sampled_at(delta_r), delta_r
    with open(path, "w", encoding="ascii") as f:
        f.write(f"step={step:.17g}\n")
        f.write(f"rows=1\ncols={samples.size}\n")
        f.write("normalization=peak\n")
        f.write(" ".join(f"{v:.17g}" for v in samples) + "\n")
