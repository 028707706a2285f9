"""End-to-end runs: config files, the render/simulate/detect flow, timing
and the oracle cross-check used by ``lidarbloom validate``.

Run configuration files use the same YAML structure as scene files; every
CLI flag has a config equivalent and flags override the file. Relative
paths are resolved against the config file's directory.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import backend
from .beamkernel import (AngularGrid, gaussian_kernel, load_measurement,
                         load_sensitivity_slices, separate)
from .echo import DetectionConfig, PulseShape, convolve_pulse, detect_echoes, \
    load_pulse, select_echo
from .pcio import PointCloud, plot_svg, read_gbuffer, to_points, write_csv, \
    write_ply
from .scanpattern import ScanPattern, grid_pattern, load_pattern
from .scene import GBuffer, RenderOptions, load_scene, render_gbuffer
from .simulate import EchoSignal, SimConfig, beam_iteration, beam_pixel, \
    oracle_direct, prepare_kernel, range_stacking, sample_beams

DEG = math.pi / 180.0

ALGORITHMS = ("beam-iteration", "range-stacking")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    base_dir: Path
    scene_path: Path | None
    gbuffer_paths: list[Path]
    kernel_spec: dict
    pattern_spec: dict
    sim: SimConfig
    skip_subthreshold: bool
    detection: DetectionConfig
    pulse_spec: dict
    select: str
    algorithm: str
    workers: int | None
    outputs: dict
    config_hash: str
    render_workers: int | None = None


@dataclass
class SimulationResult:
    cloud: PointCloud
    timing: dict
    slice_stats: list = field(default_factory=list)
    n_views: int = 1


def _resolve(base: Path, p) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse a run configuration file; ``overrides`` (flag values) win over
    file values. Violations are reported before any computation."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: run config must be a mapping")
    doc = dict(doc)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        section, _, leaf = key.partition(".")
        if leaf:
            doc.setdefault(section, {})
            if not isinstance(doc[section], dict):
                raise ConfigError(f"{path}: cannot override scalar {section!r}")
            doc[section][leaf] = val
        else:
            doc[section] = val

    base = path.parent
    scene_path = _resolve(base, doc["scene"]) if doc.get("scene") else None
    gb_paths = []
    if doc.get("gbuffer"):
        gb_paths = [_resolve(base, doc["gbuffer"])]
    elif doc.get("gbuffers"):
        gb_paths = [_resolve(base, p) for p in doc["gbuffers"]]
    if (scene_path is None) == (not gb_paths):
        raise ConfigError(f"{path}: provide exactly one of scene / gbuffer(s)")

    sim_doc = doc.get("sim") or {}
    try:
        sim = SimConfig(
            delta_r=float(sim_doc["delta_r"]),
            r_max=float(sim_doc["r_max"]),
            rho_min=float(sim_doc.get("rho_min", 0.0)),
            propagation=str(sim_doc.get("propagation", "nearest")),
            pixel_range_mode=str(sim_doc.get("pixel_range_mode", "point")),
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: sim section missing {exc}") from None

    algorithm = str(doc.get("algorithm", "range-stacking"))
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"{path}: algorithm must be one of {ALGORITHMS}")
    if algorithm == "range-stacking" and sim.pixel_range_mode != "point":
        raise ConfigError(f"{path}: range-stacking requires "
                          "sim.pixel_range_mode=point")

    det_doc = doc.get("detection") or {}
    try:
        det = DetectionConfig(threshold=float(det_doc["threshold"]),
                              ambient_gain=float(det_doc.get("ambient_gain", 0.0)))
    except KeyError as exc:
        raise ConfigError(f"{path}: detection section missing {exc}") from None
    select = str(det_doc.get("select", "all"))
    if select not in ("all", "nearest", "strongest", "longest"):
        raise ConfigError(f"{path}: unknown detection.select {select!r}")

    kernel_spec = doc.get("kernel")
    if not isinstance(kernel_spec, dict):
        raise ConfigError(f"{path}: missing kernel section")
    pattern_spec = doc.get("pattern")
    if not isinstance(pattern_spec, dict):
        raise ConfigError(f"{path}: missing pattern section")
    pulse_spec = det_doc.get("pulse") or {}

    for key in ("path",):
        if key in kernel_spec:
            p = _resolve(base, kernel_spec[key])
            if not p.exists():
                raise ConfigError(f"{path}: kernel file not found: {p}")
    if "slices" in kernel_spec:
        for s in kernel_spec["slices"]:
            p = _resolve(base, s)
            if not p.exists():
                raise ConfigError(f"{path}: kernel slice file not found: {p}")
    if "path" in pattern_spec:
        p = _resolve(base, pattern_spec["path"])
        if not p.exists():
            raise ConfigError(f"{path}: pattern file not found: {p}")
    if "path" in pulse_spec:
        p = _resolve(base, pulse_spec["path"])
        if not p.exists():
            raise ConfigError(f"{path}: pulse file not found: {p}")
    if scene_path is not None and not scene_path.exists():
        raise ConfigError(f"{path}: scene file not found: {scene_path}")
    for p in gb_paths:
        if not p.exists():
            raise ConfigError(f"{path}: gbuffer file not found: {p}")

    workers = doc.get("workers")
    workers = int(workers) if workers else None
    # hash identifies the simulation inputs; runtime knobs and output
    # locations must not change it (outputs are worker-count independent)
    hashed = {k: v for k, v in doc.items() if k not in ("workers", "output")}
    cfg_hash = hashlib.sha256(
        json.dumps(hashed, sort_keys=True, default=str).encode()).hexdigest()
    return RunConfig(
        base_dir=base, scene_path=scene_path, gbuffer_paths=gb_paths,
        kernel_spec=kernel_spec, pattern_spec=pattern_spec, sim=sim,
        skip_subthreshold=bool(sim_doc.get("skip_subthreshold", True)),
        detection=det, pulse_spec=pulse_spec, select=select,
        algorithm=algorithm, workers=workers,
        outputs=dict(doc.get("output") or {}), config_hash=cfg_hash)


def build_kernel(spec: dict, base: Path) -> AngularGrid:
    if "path" in spec:
        return load_measurement(_resolve(base, spec["path"]))
    if "slices" in spec:
        h, v = spec["slices"]
        return load_sensitivity_slices(_resolve(base, h), _resolve(base, v))
    sigma_h = float(spec.get("sigma_h_deg", spec.get("sigma_deg", 0.0)))
    sigma_v = float(spec.get("sigma_v_deg", spec.get("sigma_deg", 0.0)))
    if sigma_h <= 0 or sigma_v <= 0:
        raise ConfigError("kernel needs path, slices, or sigma_deg")
    step_deg = spec.get("step_deg")
    step = float(step_deg) * DEG if step_deg is not None else None
    tail_amp = float(spec.get("tail_amplitude", 0.0))
    tail_h = spec.get("tail_sigma_h_deg", spec.get("tail_sigma_deg"))
    tail_v = spec.get("tail_sigma_v_deg", spec.get("tail_sigma_deg"))
    if step is None:
        raise ConfigError("analytic kernels need step_deg (use the pixel "
                          "pitch of the target projection)")
    return gaussian_kernel(
        sigma_h=sigma_h * DEG, sigma_v=sigma_v * DEG,
        extent=float(spec.get("extent", 3.0)), step=step,
        tail_sigma_h=float(tail_h) * DEG if tail_h is not None else None,
        tail_sigma_v=float(tail_v) * DEG if tail_v is not None else None,
        tail_amplitude=tail_amp)


def build_pattern(spec: dict, base: Path) -> ScanPattern:
    if "path" in spec:
        return load_pattern(_resolve(base, spec["path"]))
    if "grid" in spec:
        g = spec["grid"]
        return grid_pattern(
            h_fov=float(g["hfov_deg"]) * DEG, v_fov=float(g["vfov_deg"]) * DEG,
            nh=int(g["nh"]), nv=int(g["nv"]))
    raise ConfigError("pattern needs path or grid")


def build_pulse(spec: dict, base: Path) -> PulseShape:
    if "path" in spec:
        return load_pulse(_resolve(base, spec["path"]))
    if "sigma_r" in spec:
        return PulseShape.gaussian(float(spec["sigma_r"]))
    raise ConfigError("detection.pulse needs path or sigma_r")


def _load_views(rc: RunConfig) -> list[GBuffer]:
    if rc.gbuffer_paths:
        return [read_gbuffer(p) for p in rc.gbuffer_paths]
    scene, proj, clip = load_scene(rc.scene_path)
    opts = RenderOptions(workers=rc.render_workers or rc.workers)
    return [render_gbuffer(scene, proj, opts, clip=clip)]


def assign_beams(views: list[GBuffer], pattern: ScanPattern) -> list[list[int]]:
    """First view whose image contains the beam's pixel claims the beam."""
    per_view = [[] for _ in views]
    for k, b in enumerate(pattern.beams):
        for vi, gb in enumerate(views):
            c = beam_pixel(b.beta, gb.projection)
            if c is None:
                continue
            u0, v0 = c
            H, W = gb.shape
            if 0 <= u0 < W and 0 <= v0 < H:
                per_view[vi].append(k)
                break
    return per_view


def _ambient_at(gb: GBuffer, beta) -> float:
    c = beam_pixel(beta, gb.projection)
    if c is None:
        return 0.0
    u0, v0 = c
    H, W = gb.shape
    if 0 <= u0 < W and 0 <= v0 < H:
        return float(gb.ambient[v0, u0])
    return 0.0


def run_simulation(rc: RunConfig) -> SimulationResult:
    """Execute the configured pipeline and assemble the point cloud.

    Timing is split into render ingest (rendering or loading G-buffers),
    the core convolution/iteration, and detection/assembly.
    """
    timing = {}
    t0 = time.perf_counter()
    views = _load_views(rc)
    pattern = build_pattern(rc.pattern_spec, rc.base_dir)
    kernel = build_kernel(rc.kernel_spec, rc.base_dir)
    pulse = build_pulse(rc.pulse_spec, rc.base_dir)
    timing["render_ingest"] = time.perf_counter() - t0

    per_view = assign_beams(views, pattern)
    records = [[] for _ in pattern.beams]
    slice_stats = []
    sep_tol = rc.kernel_spec.get("separate_tolerance")

    t1 = time.perf_counter()
    detect_jobs = []  # (beam index, signal or sampled echo, ambient)
    for gb, beam_idx in zip(views, per_view):
        if not beam_idx:
            continue
        if rc.algorithm == "beam-iteration":
            sub = ScanPattern(beams=tuple(pattern.beams[k] for k in beam_idx))
            signals = beam_iteration(gb, kernel, sub, rc.sim, workers=rc.workers)
            for k, sig in zip(beam_idx, signals):
                detect_jobs.append((k, sig, _ambient_at(gb, pattern.beams[k].beta)))
        else:
            kprep = prepare_kernel(kernel, gb.projection)
            karg = kprep
            if sep_tol is not None:
                pair = separate(kprep, float(sep_tol))
                if pair is not None:
                    karg = pair
            stack = range_stacking(gb, karg, rc.sim, workers=rc.workers,
                                   skip_subthreshold=rc.skip_subthreshold)
            slice_stats.append(stack.stats)
            sub = ScanPattern(beams=tuple(pattern.beams[k] for k in beam_idx))
            sampled = sample_beams(stack, sub, gb.projection)
            for k, hit in zip(beam_idx, sampled):
                if hit is not None:
                    detect_jobs.append((k, hit, _ambient_at(gb, pattern.beams[k].beta)))
    timing["convolution_iteration"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    for k, payload, ambient in detect_jobs:
        if isinstance(payload, EchoSignal):
            smoothed = convolve_pulse(payload, pulse)
            echoes = detect_echoes(smoothed, rc.detection, ambient=ambient)
            if rc.select != "all":
                chosen = select_echo(echoes, rc.select)
                echoes = [chosen] if chosen is not None else []
            records[k] = [(e.center, e.peak, e.epw, e.index) for e in echoes]
        else:
            rng, inten = payload
            s = int(math.floor(rng / rc.sim.delta_r))
            eta = np.zeros(rc.sim.s_max)
            eta[s] = inten
            smoothed = convolve_pulse(EchoSignal(eta=eta, delta_r=rc.sim.delta_r), pulse)
            echoes = detect_echoes(smoothed, rc.detection, ambient=ambient)
            if echoes:
                e = select_echo(echoes, "strongest")
                records[k] = [(rng, inten, e.epw, 0)]
    meta = {"config_hash": rc.config_hash, "algorithm": rc.algorithm,
            "beams": len(pattern),
            "kernel": json.dumps(rc.kernel_spec, sort_keys=True),
            "pattern": json.dumps(rc.pattern_spec, sort_keys=True)}
    cloud = to_points(pattern, records, meta=meta)
    timing["detection"] = time.perf_counter() - t2
    return SimulationResult(cloud=cloud, timing=timing,
                            slice_stats=slice_stats, n_views=len(views))


def write_outputs(rc: RunConfig, result: SimulationResult) -> list[Path]:
    written = []
    out = rc.outputs
    if out.get("cloud_csv"):
        p = _resolve(rc.base_dir, out["cloud_csv"])
        write_csv(result.cloud, p)
        written.append(p)
    if out.get("cloud_ply"):
        p = _resolve(rc.base_dir, out["cloud_ply"])
        write_ply(result.cloud, p)
        written.append(p)
    if out.get("plot_svg"):
        p = _resolve(rc.base_dir, out["plot_svg"])
        plot_svg(result.cloud, p, view=out.get("plot_view", "bev"),
                 color_by=out.get("plot_color", "epw"))
        written.append(p)
    return written


# ---------------------------------------------------------------------------
# Oracle cross-checks (the `validate` subcommand)
# ---------------------------------------------------------------------------

def _dominant_from_signal(sig: EchoSignal, rho_min: float, propagation: str):
    """Single dominant echo a range-stacking run would keep, derived from a
    full per-beam signal (point mode)."""
    eta = sig.eta
    qualifying = np.nonzero(eta >= rho_min)[0]
    if qualifying.size == 0:
        return None
    if propagation == "nearest":
        s = int(qualifying[0])
    else:  # strongest; exact ties keep the farthest (strict-> overwrite)
        vals = eta[qualifying]
        best = vals.max()
        s = int(qualifying[vals == best][-1])
    return s, float(eta[s])


def validate_run(rc: RunConfig, max_beams: int = 16) -> dict:
    """Cross-check beam iteration against the brute-force oracle and the
    sampled range-stacking result on the configured inputs.

    Returns max deviations: oracle vs beam_iteration (absolute, expected
    exactly 0) and range stacking vs beam iteration (relative to the peak
    signal). Runs on a deterministic subset of at most ``max_beams`` beams.
    """
    views = _load_views(rc)
    gb = views[0]
    pattern = build_pattern(rc.pattern_spec, rc.base_dir)
    kernel = prepare_kernel(build_kernel(rc.kernel_spec, rc.base_dir),
                            gb.projection)
    sim = rc.sim
    if sim.pixel_range_mode != "point":
        sim = SimConfig(delta_r=sim.delta_r, r_max=sim.r_max, rho_min=sim.rho_min,
                        propagation=sim.propagation, pixel_range_mode="point")

    in_view = assign_beams([gb], pattern)[0]
    if not in_view:
        raise ConfigError("no beams fall inside the G-buffer; nothing to validate")
    stride = max(1, len(in_view) // max_beams)
    chosen = in_view[::stride][:max_beams]
    sub = ScanPattern(beams=tuple(pattern.beams[k] for k in chosen))

    signals = beam_iteration(gb, kernel, sub, sim, workers=rc.workers)
    peak = max((float(s.eta.max()) for s in signals), default=0.0)
    scale = peak if peak > 0 else 1.0

    dev_oracle = 0.0
    for b, sig in zip(sub.beams, signals):
        ref = oracle_direct(gb, kernel, b, sim)
        dev_oracle = max(dev_oracle, float(np.abs(ref.eta - sig.eta).max()))

    stack = range_stacking(gb, kernel, sim, workers=rc.workers,
                           skip_subthreshold=rc.skip_subthreshold)
    sampled = sample_beams(stack, sub, gb.projection)
    dev_stack = 0.0
    bins_mismatch = 0
    for sig, hit in zip(signals, sampled):
        want = _dominant_from_signal(sig, sim.rho_min, sim.propagation)
        if want is None or hit is None:
            if want is not None or hit is not None:
                bins_mismatch += 1
            continue
        s_want, eta_want = want
        rng, eta_got = hit
        if abs(rng - (s_want + 0.5) * sim.delta_r) > 1e-12 * max(rng, 1.0):
            bins_mismatch += 1
        dev_stack = max(dev_stack, abs(eta_got - eta_want) / scale)
    return {
        "beams_checked": len(chosen),
        "oracle_vs_beam_max_abs": dev_oracle,
        "stacking_vs_beam_max_rel": dev_stack,
        "stacking_bin_mismatches": bins_mismatch,
        "backend": backend.BACKEND,
    }
