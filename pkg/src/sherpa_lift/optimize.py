"""Geometry lifting and appearance stages driven by SDS plus prior guidance."""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adam import OptimState, adam_step
from .field import FieldParams, project_offsets
from .grid import TetGrid
from .guidance import GuidanceConfig, anneal, make_encoder, semantic_guidance, structural_loss
from .render import (AlbedoField, CameraPose, color_backward, normals_backward, rasterize_color,
                     rasterize_normals, sample_cameras)
from .score import (ConditionToken, DiffusionSchedule, WeightSchedule, sample_timestep,
                    sds_image_gradient)
from .tessellate import SurfaceMesh, marching_tets, mt_backward

__all__ = ["OptimState", "adam_step", "ScoreBundle", "StageConfig", "CameraConfig",
           "StageError", "geometry_loss", "run_geometry_stage", "run_appearance_stage"]

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    pass


def workers() -> int:
    """Worker cap from SHERPA_LIFT_THREADS (0 or unset = number of CPUs)."""
    raw = os.environ.get("SHERPA_LIFT_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _map(fn, items):
    n = min(workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))  # preserves input order


@dataclass
class ScoreBundle:
    schedule: DiffusionSchedule
    provider: object
    condition: Callable[[CameraPose], ConditionToken]
    cfg_scale: float = 50.0
    weight: WeightSchedule = WeightSchedule()
    timestep: str = "linear-descending"
    total_iterations: int = 300
    seed: int = 0

    def timestep_at(self, iteration: int) -> int:
        total = max(self.total_iterations, iteration + 1)
        return sample_timestep(self.timestep, iteration, total, self.schedule.T, self.seed)

    def noise(self, iteration: int, shape) -> np.ndarray:
        return np.random.default_rng([self.seed, 2, iteration]).standard_normal(shape)


@dataclass
class StageConfig:
    iterations: int = 300
    lr: float = 1e-3
    lr_final: float = 5e-4


@dataclass
class CameraConfig:
    b: int = 2
    l: int = 4
    elev_min: float = -30.0
    elev_max: float = 30.0
    radius: float = 2.5
    fov: float = 45.0
    res: int = 64

    def sample(self, seed) -> list[CameraPose]:
        return sample_cameras(self.b, self.l, (self.elev_min, self.elev_max), self.radius,
                              self.fov, (self.res, self.res), seed)


def geometry_loss(grid: TetGrid, prior_params: FieldParams, live_params: FieldParams,
                  cameras: list[CameraPose], guidance: GuidanceConfig, score: ScoreBundle,
                  iteration: int, *, encoder=None, prior_mesh: SurfaceMesh | None = None):
    """Diagnostics and the total gradient w.r.t. the live field parameters.

    The gradient is the SDS image gradient plus the annealed guidance
    gradients, chained through rasterisation and marching tets.  SDS has no
    scalar value; its residual norm is reported instead.
    """
    encoder = encoder or make_encoder(guidance.encoder)
    live_mesh = marching_tets(grid, live_params)
    if prior_mesh is None:
        prior_mesh = marching_tets(grid, prior_params)
    live = _map(lambda c: rasterize_normals(live_mesh, c), cameras)
    prior = _map(lambda c: rasterize_normals(prior_mesh, c), cameras)

    g_struc = anneal(guidance.lambda_struc, iteration, guidance.beta, guidance.m)
    g_sem = anneal(guidance.lambda_sem, iteration, guidance.beta, guidance.m)
    l_struc, d_struc = structural_loss(prior, live, guidance)
    l_sem, d_sem = semantic_guidance(encoder, prior, live)

    t = score.timestep_at(iteration)
    h, w = cameras[0].height, cameras[0].width
    eps = score.noise(iteration, (h, w, 3))  # one draw shared by every view

    def view_grad(k):
        cam = cameras[k]
        g_sds, resid = sds_image_gradient(score.provider, live[k].pixels, score.condition(cam), t,
                                          eps, score.cfg_scale, score.weight, score.schedule)
        total = g_sds + g_struc * d_struc[k] + g_sem * d_sem[k]
        _, gv = normals_backward(live_mesh, live[k], total)
        return gv, resid

    parts = _map(view_grad, list(range(len(cameras))))
    gv = np.zeros_like(live_mesh.vertices)
    resid_sq = 0.0
    for g, r in parts:
        gv += g
        resid_sq += r * r
    if len(live_mesh.vertices):
        grad = mt_backward(grid, live_params, live_mesh, gv)
    else:
        grad = FieldParams(np.zeros_like(live_params.sdf), np.zeros_like(live_params.offset))
    diag = {"sds_residual_norm": float(np.sqrt(resid_sq)), "l_struc": l_struc, "l_sem": l_sem,
            "gamma_struc": g_struc, "gamma_sem": g_sem, "t": t}
    return diag, grad


def run_geometry_stage(grid: TetGrid, fitted: FieldParams, stage: StageConfig,
                       guidance: GuidanceConfig, score: ScoreBundle, cameras: CameraConfig,
                       seed: int = 0, probe: Callable[[int, FieldParams], None] | None = None):
    """Refine the fitted field; the fitted field itself is frozen as the prior."""
    prior = fitted.copy()
    prior_mesh = marching_tets(grid, prior)
    params = fitted.copy()
    encoder = make_encoder(guidance.encoder)
    state = OptimState(lr=stage.lr, lr_final=stage.lr_final, total_steps=stage.iterations)
    metrics = []
    for it in range(stage.iterations):
        if probe is not None:
            probe(it, params)
        t0 = time.perf_counter()
        cams = cameras.sample([seed, 1, it])
        diag, grad = geometry_loss(grid, prior, params, cams, guidance, score, it,
                                   encoder=encoder, prior_mesh=prior_mesh)
        if not all(np.isfinite(v) for v in diag.values()):
            raise StageError(f"geometry stage: non-finite loss at iteration {it}")
        try:
            new = adam_step(params.as_dict(), grad.as_dict(), state)
        except FloatingPointError as exc:
            raise StageError(f"geometry stage: iteration {it}: {exc}") from exc
        params = FieldParams(new["sdf"], project_offsets(grid, new["offset"]))
        diag = {"iteration": it, **diag, "wall_ms": (time.perf_counter() - t0) * 1e3}
        metrics.append(diag)
    if probe is not None:
        probe(stage.iterations, params)
    return params, metrics


def headlight(camera: CameraPose) -> np.ndarray:
    p = camera.position
    return p / np.linalg.norm(p)


def run_appearance_stage(grid: TetGrid, geometry: FieldParams, albedo: AlbedoField,
                         stage: StageConfig, score: ScoreBundle, cameras: CameraConfig,
                         seed: int = 0):
    """Optimise per-grid-vertex albedo by SDS on Lambertian renders; geometry is read-only."""
    sdf = geometry.sdf.copy()
    off = geometry.offset.copy()
    sdf.setflags(write=False)
    off.setflags(write=False)
    frozen = FieldParams(sdf, off)
    mesh = marching_tets(grid, frozen)
    values = albedo.values.copy()
    state = OptimState(lr=stage.lr, lr_final=stage.lr_final, total_steps=stage.iterations)
    metrics = []
    for it in range(stage.iterations):
        t0 = time.perf_counter()
        cams = cameras.sample([seed, 3, it])
        t = score.timestep_at(it)
        eps = score.noise(it, (cams[0].height, cams[0].width, 3))
        field_now = AlbedoField(values)

        def view_grad(cam):
            img = rasterize_color(mesh, field_now, cam, headlight(cam))
            g, resid = sds_image_gradient(score.provider, img.pixels, score.condition(cam), t, eps,
                                          score.cfg_scale, score.weight, score.schedule)
            return color_backward(mesh, img, g), resid

        parts = _map(view_grad, cams)
        gcol = np.zeros((len(mesh.vertices), 3))
        resid_sq = 0.0
        for g, r in parts:
            gcol += g
            resid_sq += r * r
        grad = field_now.surface_backward(mesh, gcol) if len(mesh.vertices) else np.zeros_like(values)
        try:
            new = adam_step({"albedo": values}, {"albedo": grad}, state)
        except FloatingPointError as exc:
            raise StageError(f"appearance stage: iteration {it}: {exc}") from exc
        values = np.clip(new["albedo"], 0.0, 1.0)
        metrics.append({"iteration": it, "sds_residual_norm": float(np.sqrt(resid_sq)), "t": t,
                        "wall_ms": (time.perf_counter() - t0) * 1e3})
    return AlbedoField(values), metrics
