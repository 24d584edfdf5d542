"""``sherpa-lift`` command line: run, fit, render, check, report."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .checks import SUITES, run_suite
from .config import ConfigError, load_config
from .field import PointLocationError, SamplingError, fit_prior
from .grid import TetGrid
from .optimize import headlight
from .pipeline import run_pipeline
from .render import CameraPose, rasterize_color, rasterize_normals
from .report import metrics_figure
from .scene import SceneError, load_scene
from .tessellate import marching_tets

log = logging.getLogger("sherpa_lift")


def _fail(msg: str, code: int = 1) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_overrides(run__seed=args.seed)
        result = run_pipeline(cfg, args.out)
    except (ConfigError, SceneError) as exc:
        return _fail(str(exc))
    print(f"run: {result.manifest['status']} -> {result.out}")
    return result.status


def cmd_fit(args) -> int:
    try:
        cfg = load_config(args.config)
        scene = load_scene(cfg["scene.path"])
    except (ConfigError, SceneError) as exc:
        return _fail(str(exc))
    out = Path(args.out or cfg["run.out"])
    grid = TetGrid(cfg["grid.resolution"])
    try:
        params, report = fit_prior(grid, scene, cfg.fit_config())
    except (SamplingError, PointLocationError, FloatingPointError) as exc:
        return _fail(f"fit failed: {exc}", 2)
    mesh = marching_tets(grid, params)
    sio.write_obj(out / "coarse.obj", mesh)
    sio.write_json(out / "fit_report.json", report.to_json())
    print(f"fit: loss {report.final_loss:.6g}, held-out MAE {report.held_out_mae:.4g}, "
          f"{len(mesh.triangles)} faces -> {out}")
    return 0


def cmd_render(args) -> int:
    path = Path(args.path)
    albedo = None
    if path.is_dir():
        mesh_path = path / "final.obj"
        if not mesh_path.exists():
            mesh_path = path / "coarse.obj"
        if (path / "albedo.npy").exists():
            albedo = np.load(path / "albedo.npy")
        out = Path(args.out) if args.out else path / "renders"
    else:
        mesh_path = path
        out = Path(args.out) if args.out else path.parent / "renders"
    try:
        mesh = sio.read_obj(mesh_path)
    except (OSError, sio.MeshFormatError) as exc:
        return _fail(f"cannot read mesh {str(mesh_path)!r}: {exc}")
    if albedo is not None and len(albedo) != len(mesh.vertices):
        return _fail("albedo.npy does not match the mesh's vertex count")
    try:
        cams = [CameraPose(args.radius, args.elevation, az, args.fov, args.res, args.res)
                for az in (args.azimuth or [0.0])]
    except ValueError as exc:
        return _fail(str(exc))
    for cam in cams:
        tag = f"az{cam.azimuth:g}_el{cam.elevation:g}"
        nm = rasterize_normals(mesh, cam)
        sio.write_png(out / f"normal_{tag}.png", nm.pixels)
        sio.write_mask_png(out / f"mask_{tag}.png", nm.mask)
        if albedo is not None:
            img = rasterize_color(mesh, albedo, cam, headlight(cam))
            sio.write_png(out / f"color_{tag}.png", img.pixels)
    print(f"render: {len(cams)} view(s) -> {out}")
    return 0


def cmd_check(args) -> int:
    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        return _fail(f"unknown suite {unknown[0]!r}; available suites: {', '.join(SUITES)}")
    ok = True
    for name in names:
        print(f"== {name}")
        for res in run_suite(name):
            print("  " + res.line())
            ok &= res.passed
    return 0 if ok else 1


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    metrics = run / "metrics.jsonl"
    if not metrics.exists():
        return _fail(f"no metrics.jsonl in {str(run)!r}")
    path = metrics_figure(sio.read_jsonl(metrics), run / "metrics.png")
    print(f"report: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sherpa-lift", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="fit, lift and colour; write a run directory")
    r.add_argument("config")
    r.add_argument("--seed", type=int, help="override run.seed")
    r.add_argument("--out", help="override run.out")
    r.set_defaults(fn=cmd_run)

    f = sub.add_parser("fit", help="fit the prior only; write coarse.obj and fit_report.json")
    f.add_argument("config")
    f.add_argument("--out", help="override run.out")
    f.set_defaults(fn=cmd_fit)

    d = sub.add_parser("render", help="render normal maps (and colour, if albedo exists)")
    d.add_argument("path", help="an OBJ file or a run directory")
    d.add_argument("--azimuth", type=float, action="append", help="degrees; repeat for more views")
    d.add_argument("--elevation", type=float, default=0.0)
    d.add_argument("--radius", type=float, default=2.5)
    d.add_argument("--fov", type=float, default=45.0)
    d.add_argument("--res", type=int, default=64)
    d.add_argument("--out", help="output directory (default: <path>/renders)")
    d.set_defaults(fn=cmd_render)

    c = sub.add_parser("check", help="run verification suites")
    c.add_argument("--suite", action="append", help=f"one of: {', '.join(SUITES)} (default: all)")
    c.set_defaults(fn=cmd_check)

    m = sub.add_parser("report", help="redraw the metrics figure of a run directory")
    m.add_argument("run_dir")
    m.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
