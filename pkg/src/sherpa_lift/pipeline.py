"""End-to-end run: fit the prior, lift the geometry, optimise albedo, write artifacts.

Desk-scale stand-in for the 2D model: the analytic point-mass provider whose
per-view targets are renders of ``scene.target`` (normal maps for geometry,
Lambertian images of a constant albedo for appearance).
"""
from __future__ import annotations

import io as _io
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import io as sio
from .config import RunConfig
from .field import FieldParams, PointLocationError, SamplingError, fit_prior
from .grid import TetGrid
from .optimize import ScoreBundle, StageError, headlight, run_appearance_stage, run_geometry_stage
from .render import AlbedoField, CameraPose, rasterize_color, rasterize_normals
from .report import image_grid, metrics_figure
from .scene import PriorScene, load_scene
from .score import ConditionToken, PointMassProvider, make_schedule
from .tessellate import SurfaceMesh, marching_tets

# fixed poses for the sample renders written to every run directory
PREVIEW_AZIMUTHS = (0.0, 90.0, 180.0, 270.0)
PREVIEW_ELEVATION = 15.0

# artifacts whose bytes depend on timing and are left out of the checksums
_UNHASHED = {"metrics.jsonl", "appearance_metrics.jsonl", "metrics.png", "renders.png",
             "manifest.json"}


@dataclass
class RunResult:
    status: int  # 0 ok, 2 stage failure
    out: Path
    manifest: dict = field(default_factory=dict)


def _cam_name(cam: CameraPose) -> str:
    return f"az{cam.azimuth:.9g}_el{cam.elevation:.9g}"


def target_mesh(grid: TetGrid, target: PriorScene) -> SurfaceMesh:
    """Target surface extracted from the oracle SDF sampled at the grid vertices."""
    return marching_tets(grid, FieldParams(target.sdf(grid.vertices), np.zeros((grid.n_vertices, 3))))


def normal_condition(mesh: SurfaceMesh) -> Callable[[CameraPose], ConditionToken]:
    return lambda cam: ConditionToken("normal:" + _cam_name(cam), rasterize_normals(mesh, cam).pixels)


def color_condition(mesh: SurfaceMesh, colors) -> Callable[[CameraPose], ConditionToken]:
    def cond(cam):
        img = rasterize_color(mesh, colors, cam, headlight(cam))
        return ConditionToken("color:" + _cam_name(cam), img.pixels)
    return cond


def preview_cameras(res: int, radius: float = 2.5, fov: float = 45.0) -> list[CameraPose]:
    return [CameraPose(radius, PREVIEW_ELEVATION, az, fov, res, res) for az in PREVIEW_AZIMUTHS]


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = _io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


def run_pipeline(cfg: RunConfig, out: str | Path | None = None,
                 say: Callable[[str], None] = print) -> RunResult:
    out = Path(out if out is not None else cfg["run.out"])
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["run.seed"]
    manifest = {
        "config": cfg.to_dict(include_out=False),
        "seeds": {"run": seed, "fit_samples": [seed], "held_out": [seed, 1],
                  "geometry_cameras": [seed, 1, "iteration"], "sds_noise": [seed, 2, "iteration"],
                  "appearance_cameras": [seed, 3, "iteration"]},
        "stages": {},
        "artifacts": {},
        "status": "running",
    }
    written: list[str] = []

    def put(name: str, writer, *args):
        writer(out / name, *args)
        written.append(name)

    # scene errors are configuration errors, raised before any stage starts
    scene = load_scene(cfg["scene.path"])
    target = load_scene(cfg["scene.target"]) if cfg["scene.target"] else scene
    scene.validate_in_box()
    target.validate_in_box()
    grid = TetGrid(cfg["grid.resolution"])

    stage = "fit"
    try:
        t0 = time.perf_counter()
        fitted, report = fit_prior(grid, scene, cfg.fit_config())
        coarse = marching_tets(grid, fitted)
        put("coarse.obj", sio.write_obj, coarse)
        put("fit_report.json", sio.write_json, report.to_json())
        manifest["stages"]["fit"] = {"final_loss": report.final_loss,
                                     "held_out_mae": report.held_out_mae}
        say(f"fit: {report.iterations} iterations, loss {report.final_loss:.6g}, "
            f"held-out MAE {report.held_out_mae:.4g}, {len(coarse.triangles)} faces "
            f"({time.perf_counter() - t0:.1f}s)")

        stage = "geometry"
        t0 = time.perf_counter()
        schedule = make_schedule(cfg["score.T"], cfg["score.beta_start"], cfg["score.beta_end"])
        provider = PointMassProvider(schedule)
        geo_stage = cfg.stage("geometry")
        bundle = ScoreBundle(schedule, provider, normal_condition(target_mesh(grid, target)),
                             cfg["score.cfg_scale"], cfg.weight(), cfg["score.timestep"],
                             geo_stage.iterations, seed)
        params, metrics = run_geometry_stage(grid, fitted, geo_stage, cfg.guidance(), bundle,
                                             cfg.cameras(), seed)
        final = marching_tets(grid, params)
        put("final.obj", sio.write_obj, final)
        sio.write_jsonl(out / "metrics.jsonl", metrics)
        metrics_figure(metrics, out / "metrics.png")
        manifest["stages"]["geometry"] = {"iterations": len(metrics), "faces": int(len(final.triangles))}
        say(f"geometry: {len(metrics)} iterations, {len(final.triangles)} faces "
            f"({time.perf_counter() - t0:.1f}s)")

        previews = preview_cameras(cfg["camera.res"], cfg["camera.radius"], cfg["camera.fov"])
        images, labels = [], []
        for cam in previews:
            nm = rasterize_normals(final, cam)
            name = f"normal_az{cam.azimuth:03.0f}"
            put(name + ".png", sio.write_png, nm.pixels)
            put(name.replace("normal", "mask") + ".png", sio.write_mask_png, nm.mask)
            images.append(nm.pixels)
            labels.append(f"normal az {cam.azimuth:.0f}")

        stage = "appearance"
        app_stage = cfg.stage("appearance")
        if app_stage.iterations > 0:
            t0 = time.perf_counter()
            target_albedo = AlbedoField.constant(grid, cfg["appearance.target"])
            cbundle = ScoreBundle(schedule, provider,
                                  color_condition(final, target_albedo.surface_colors(final)),
                                  cfg["score.cfg_scale"], cfg.weight(), cfg["score.timestep"],
                                  app_stage.iterations, seed)
            albedo, ametrics = run_appearance_stage(grid, params,
                                                    AlbedoField.constant(grid, cfg["appearance.init"]),
                                                    app_stage, cbundle, cfg.cameras(), seed)
            colors = albedo.surface_colors(final)
            put("albedo.npy", lambda p, a: sio.atomic_write(p, _npy_bytes(a)), colors)
            sio.write_jsonl(out / "appearance_metrics.jsonl", ametrics)
            for cam in previews:
                img = rasterize_color(final, colors, cam, headlight(cam))
                put(f"color_az{cam.azimuth:03.0f}.png", sio.write_png, img.pixels)
                images.append(img.pixels)
                labels.append(f"color az {cam.azimuth:.0f}")
            manifest["stages"]["appearance"] = {"iterations": len(ametrics)}
            say(f"appearance: {len(ametrics)} iterations ({time.perf_counter() - t0:.1f}s)")
        else:
            say("appearance: skipped (0 iterations)")
        image_grid(images, labels, out / "renders.png")
        manifest["status"] = "ok"
        status = 0
    except (StageError, SamplingError, PointLocationError, FloatingPointError, ValueError) as exc:
        manifest["status"] = "failed"
        manifest["failed_stage"] = stage
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        say(f"{stage}: FAILED: {exc}")
        status = 2

    manifest["artifacts"] = {n: sio.sha256(out / n) for n in sorted(written) if n not in _UNHASHED}
    sio.write_json(out / "manifest.json", manifest)
    return RunResult(status, out, manifest)
