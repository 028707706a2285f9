"""Command line interface.

Subcommands: render (scene -> G-buffer), kernel (build/combine/separate),
simulate (G-buffer + kernel + pattern -> point cloud), validate (oracle
cross-checks), plot (cloud -> SVG). Failures exit nonzero after printing a
single machine-readable JSON error line to stderr. LIDARBLOOM_WORKERS
overrides the worker count when no flag is given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

from . import __version__, backend
from .beamkernel import (combine, gaussian_kernel, load_measurement,
                         load_sensitivity_slices, normalize,
                         rank_one_approximation, save_grid, separate)
from .pcio import plot_svg, read_csv, write_gbuffer
from .pipeline import (ConfigError, load_run_config, run_simulation,
                       validate_run, write_outputs)
from .scene import RenderOptions, load_scene, render_gbuffer

DEG = math.pi / 180.0


def _fail(code: str, **fields) -> "int":
    fields["error"] = code
    print(json.dumps(fields, sort_keys=True), file=sys.stderr)
    return 2


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _cmd_render(args) -> int:
    try:
        scene, proj, clip = load_scene(args.scene)
    except (OSError, ValueError) as exc:
        return _fail("scene_load_failed", path=str(args.scene), detail=str(exc))
    opts = RenderOptions(workers=args.workers, supersample=args.supersample,
                         quantize_ranges=not args.no_quantize,
                         normal_bits=args.normal_bits)
    gbuf = render_gbuffer(scene, proj, opts, clip=clip)
    write_gbuffer(gbuf, args.output)
    print(f"wrote {args.output} ({proj.width_px}x{proj.height_px}, "
          f"quantized={gbuf.clip is not None})")
    print(f"sha256 {args.output} {_sha256(Path(args.output))}")
    return 0


def _cmd_kernel(args) -> int:
    try:
        if args.kernel_cmd == "gaussian":
            grid = gaussian_kernel(
                sigma_h=args.sigma_deg * DEG, sigma_v=(args.sigma_v_deg or args.sigma_deg) * DEG,
                extent=args.extent, step=args.step_deg * DEG,
                tail_sigma_h=args.tail_sigma_deg * DEG if args.tail_sigma_deg else None,
                tail_sigma_v=args.tail_sigma_deg * DEG if args.tail_sigma_deg else None,
                tail_amplitude=args.tail_amplitude)
            save_grid(grid, args.output)
        elif args.kernel_cmd == "combine":
            e = load_measurement(args.emitter)
            c = load_measurement(args.collector)
            grid = combine(e, c, resample=args.resample, align_peaks=args.align_peaks)
            if args.normalize:
                grid = normalize(grid, args.normalize)
            save_grid(grid, args.output)
        elif args.kernel_cmd == "from-slices":
            grid = load_sensitivity_slices(args.h_slice, args.v_slice)
            save_grid(grid, args.output)
        elif args.kernel_cmd == "separate":
            grid = load_measurement(args.kernel)
            pair = separate(grid, args.tolerance)
            if pair is None:
                res = rank_one_approximation(grid).residual
                return _fail("kernel_not_separable", residual=res,
                             tolerance=args.tolerance)
            from .beamkernel import AngularGrid
            save_grid(AngularGrid(values=pair.h[None, :], step=grid.step),
                      args.h_out)
            save_grid(AngularGrid(values=pair.v[None, :], step=grid.step),
                      args.v_out)
            print(f"residual={pair.residual:.6g}")
        else:  # pragma: no cover
            return _fail("unknown_kernel_command", command=args.kernel_cmd)
    except (OSError, ValueError) as exc:
        return _fail("kernel_command_failed", detail=str(exc))
    return 0


def _cmd_simulate(args) -> int:
    overrides = {
        "algorithm": args.algorithm,
        "workers": args.workers,
        "sim.skip_subthreshold": (False if args.no_skip else None),
        "output.cloud_csv": args.out_csv,
        "output.cloud_ply": args.out_ply,
        "output.plot_svg": args.out_svg,
    }
    try:
        rc = load_run_config(args.config, overrides)
    except (OSError, ConfigError, ValueError) as exc:
        return _fail("config_invalid", path=str(args.config), detail=str(exc))
    result = run_simulation(rc)
    for name, secs in result.timing.items():
        print(f"timing {name}={secs:.3f}s")
    for st in result.slice_stats:
        print(f"slices total={st.total_bins} occupied={st.occupied} "
              f"processed={st.processed} skipped_empty={st.skipped_empty} "
              f"skipped_subthreshold={st.skipped_subthreshold}")
    print(f"points {len(result.cloud)} (beams {result.cloud.meta.get('beams')}, "
          f"views {result.n_views}, backend {backend.BACKEND})")
    written = write_outputs(rc, result)
    if not written:
        return _fail("no_outputs_configured", config=str(args.config))
    for p in written:
        print(f"sha256 {p} {_sha256(p)}")
    return 0


def _cmd_validate(args) -> int:
    config = args.config
    if config is None:
        config = Path(__file__).parent / "data" / "validate_config.yaml"
    try:
        rc = load_run_config(config, {"workers": args.workers})
        report = validate_run(rc, max_beams=args.beams)
    except (OSError, ConfigError, ValueError) as exc:
        return _fail("validate_failed", path=str(config), detail=str(exc))
    for key, val in report.items():
        print(f"{key}={val}")
    ok = (report["oracle_vs_beam_max_abs"] == 0.0
          and report["stacking_vs_beam_max_rel"] < 1e-12
          and report["stacking_bin_mismatches"] == 0)
    print("validate: " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


def _cmd_plot(args) -> int:
    try:
        cloud = read_csv(args.cloud)
    except (OSError, ValueError) as exc:
        return _fail("cloud_load_failed", path=str(args.cloud), detail=str(exc))
    plot_svg(cloud, args.output, view=args.view, color_by=args.color_by)
    print(f"sha256 {args.output} {_sha256(Path(args.output))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lidarbloom",
        description="Synthesize ToF LiDAR point clouds with blooming, echo "
                    "pulse width and ambient noise floor from G-buffers.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a scene file into a G-buffer")
    p.add_argument("scene")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--supersample", type=int, default=1)
    p.add_argument("--no-quantize", action="store_true",
                   help="skip z-buffer range quantization even if the scene "
                        "declares clip planes")
    p.add_argument("--normal-bits", type=int, default=None)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("kernel", help="build, combine or separate beam kernels")
    ksub = p.add_subparsers(dest="kernel_cmd", required=True)
    g = ksub.add_parser("gaussian")
    g.add_argument("--sigma-deg", type=float, required=True, dest="sigma_deg")
    g.add_argument("--sigma-v-deg", type=float, default=None, dest="sigma_v_deg")
    g.add_argument("--extent", type=float, default=3.0)
    g.add_argument("--step-deg", type=float, required=True, dest="step_deg")
    g.add_argument("--tail-sigma-deg", type=float, default=None, dest="tail_sigma_deg")
    g.add_argument("--tail-amplitude", type=float, default=0.0, dest="tail_amplitude")
    g.add_argument("-o", "--output", required=True)
    c = ksub.add_parser("combine")
    c.add_argument("emitter")
    c.add_argument("collector")
    c.add_argument("--resample", action="store_true")
    c.add_argument("--align-peaks", action="store_true")
    c.add_argument("--normalize", choices=("peak", "sum"), default=None)
    c.add_argument("-o", "--output", required=True)
    fs = ksub.add_parser("from-slices")
    fs.add_argument("h_slice")
    fs.add_argument("v_slice")
    fs.add_argument("-o", "--output", required=True)
    sp = ksub.add_parser("separate")
    sp.add_argument("kernel")
    sp.add_argument("--tolerance", type=float, default=1e-6)
    sp.add_argument("--h-out", required=True)
    sp.add_argument("--v-out", required=True)
    p.set_defaults(func=_cmd_kernel)

    p = sub.add_parser("simulate", help="run the full pipeline from a config file")
    p.add_argument("config")
    p.add_argument("--algorithm", choices=("beam-iteration", "range-stacking"),
                   default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--no-skip", action="store_true",
                   help="disable sub-threshold slice skipping")
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-ply", default=None)
    p.add_argument("--out-svg", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("validate", help="oracle cross-checks; prints max deviations")
    p.add_argument("config", nargs="?", default=None,
                   help="run config (defaults to the shipped demo)")
    p.add_argument("--beams", type=int, default=16)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("plot", help="plot a cloud CSV as SVG")
    p.add_argument("cloud")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--view", choices=("bev", "front"), default="bev")
    p.add_argument("--color-by", choices=("epw", "intensity", "range"),
                   default="epw", dest="color_by")
    p.set_defaults(func=_cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
