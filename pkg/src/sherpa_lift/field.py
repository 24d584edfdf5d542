"""Per-vertex SDF field on the tet grid and the prior-fitting objective."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .adam import OptimState, adam_step
from .grid import TetGrid
from .scene import PriorScene

log = logging.getLogger(__name__)

OFFSET_CAP_FRACTION = 0.45


class SamplingError(RuntimeError):
    pass


class PointLocationError(ValueError):
    pass


@dataclass
class FieldParams:
    """Direct per-vertex parameterisation: one sdf value and one offset per grid vertex."""

    sdf: np.ndarray
    offset: np.ndarray

    @classmethod
    def zeros(cls, grid: TetGrid, sdf_value: float = 0.0) -> "FieldParams":
        return cls(np.full(grid.n_vertices, float(sdf_value)), np.zeros((grid.n_vertices, 3)))

    def copy(self) -> "FieldParams":
        return FieldParams(self.sdf.copy(), self.offset.copy())

    def positions(self, grid: TetGrid) -> np.ndarray:
        return grid.vertices + self.offset

    def as_dict(self) -> dict:
        return {"sdf": self.sdf, "offset": self.offset}


def offset_cap(grid: TetGrid) -> float:
    return OFFSET_CAP_FRACTION * grid.spacing


def project_offsets(grid: TetGrid, offset: np.ndarray, cap: float | None = None) -> np.ndarray:
    """Clamp offset norms to ``cap`` and pin boundary vertices to their cube faces."""
    cap = offset_cap(grid) if cap is None else cap
    out = np.where(grid.boundary_axes, 0.0, offset)
    norm = np.linalg.norm(out, axis=1)
    scale = np.where(norm > cap, cap / np.maximum(norm, 1e-300), 1.0)
    return out * scale[:, None]


def field_eval(grid: TetGrid, params: FieldParams, index: int) -> tuple[float, np.ndarray]:
    if not 0 <= index < grid.n_vertices:
        raise IndexError(f"vertex index {index} out of range [0, {grid.n_vertices})")
    return float(params.sdf[index]), params.offset[index].copy()


# ---------------------------------------------------------------------------
# point sampling
# ---------------------------------------------------------------------------

@dataclass
class PointSamples:
    """Sample positions with their target signed distances (a sequence of PointSample)."""

    positions: np.ndarray
    target: np.ndarray

    def __len__(self):
        return len(self.target)

    def __getitem__(self, i):
        return self.positions[i], float(self.target[i])

    def canonical(self) -> "PointSamples":
        """Lexicographically sorted copy; makes fitting independent of input order."""
        order = np.lexsort((self.target, self.positions[:, 2], self.positions[:, 1],
                            self.positions[:, 0]))
        return PointSamples(self.positions[order], self.target[order])


def _project_to_surface(scene: PriorScene, p: np.ndarray, max_steps: int = 256,
                        tol: float = 1e-9) -> np.ndarray:
    """Gradient-directed sphere tracing followed by Newton closest-point refinement."""
    p = p.copy()
    d = scene.sdf(p)
    for _ in range(max_steps):
        active = np.abs(d) > tol
        if not active.any():
            return p
        g = scene.gradient(p[active])
        gn = np.linalg.norm(g, axis=1)
        bad = gn < 1e-9
        if bad.any():
            # sitting on a medial point; nudge deterministically off it
            g[bad] = np.array([0.5773502691896258] * 3)
            gn[bad] = 1.0
        n = g / gn[:, None]
        # sphere-trace step of |d| along the descent direction, then a Newton step
        step = d[active][:, None] * n
        newton = d[active][:, None] * g / (gn[:, None] ** 2)
        q = p[active] - np.where(np.abs(d[active])[:, None] > 1e-3, step, newton)
        p[active] = np.clip(q, -1.0, 1.0)
        d = scene.sdf(p)
    raise SamplingError(f"surface projection did not converge in {max_steps} steps "
                        f"for {int((np.abs(d) > tol).sum())} point(s); degenerate scene?")


def sample_prior_points(scene: PriorScene, counts, band: float = 0.1,
                        seed: int = 0) -> PointSamples:
    """Surface, near-surface and uniform samples with oracle targets.

    ``counts`` is ``(n_surface, n_near, n_uniform)`` or a mapping with keys
    ``surface``, ``near``, ``uniform``.
    """
    if isinstance(counts, dict):
        n_s, n_n, n_u = counts.get("surface", 0), counts.get("near", 0), counts.get("uniform", 0)
    else:
        n_s, n_n, n_u = counts
    if min(n_s, n_n, n_u) < 0:
        raise ValueError("sample counts must be >= 0")
    if band <= 0:
        raise ValueError("band must be > 0")
    rng = np.random.default_rng(seed)
    parts = []
    if n_s + n_n:
        start = rng.uniform(-1.0, 1.0, size=(n_s + n_n, 3))
        surf = _project_to_surface(scene, start)
        parts.append(surf[:n_s])
        if n_n:
            base = surf[n_s:]
            g = scene.gradient(base)
            g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
            delta = rng.uniform(-band, band, size=n_n)
            parts.append(np.clip(base + delta[:, None] * g, -1.0, 1.0))
    if n_u:
        parts.append(rng.uniform(-1.0, 1.0, size=(n_u, 3)))
    pos = np.concatenate(parts) if parts else np.zeros((0, 3))
    return PointSamples(pos, scene.sdf(pos) if len(pos) else np.zeros(0))


# ---------------------------------------------------------------------------
# point location and interpolation
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _bary(x, tet, p, out):
    a = x[tet[0]]
    d00 = x[tet[1], 0] - a[0]; d01 = x[tet[1], 1] - a[1]; d02 = x[tet[1], 2] - a[2]
    d10 = x[tet[2], 0] - a[0]; d11 = x[tet[2], 1] - a[1]; d12 = x[tet[2], 2] - a[2]
    d20 = x[tet[3], 0] - a[0]; d21 = x[tet[3], 1] - a[1]; d22 = x[tet[3], 2] - a[2]
    r0 = p[0] - a[0]; r1 = p[1] - a[1]; r2 = p[2] - a[2]
    # columns are the edge vectors; Cramer's rule
    det = (d00 * (d11 * d22 - d21 * d12) - d10 * (d01 * d22 - d21 * d02)
           + d20 * (d01 * d12 - d11 * d02))
    if abs(det) < 1e-300:
        out[:] = -np.inf
        return -np.inf
    l1 = (r0 * (d11 * d22 - d21 * d12) - d10 * (r1 * d22 - d21 * r2)
          + d20 * (r1 * d12 - d11 * r2)) / det
    l2 = (d00 * (r1 * d22 - d21 * r2) - r0 * (d01 * d22 - d21 * d02)
          + d20 * (d01 * r2 - r1 * d02)) / det
    l3 = (d00 * (d11 * r2 - r1 * d12) - d10 * (d01 * r2 - r1 * d02)
          + r0 * (d01 * d12 - d11 * d02)) / det
    out[0] = 1.0 - l1 - l2 - l3
    out[1] = l1
    out[2] = l2
    out[3] = l3
    return min(out[0], min(l1, min(l2, l3)))


@numba.njit(cache=True, nogil=True)
def _locate(x, tets, pts, res, spacing, tol):
    n = pts.shape[0]
    tet_id = np.full(n, -1, np.int64)
    bary = np.zeros((n, 4))
    cand = np.zeros(4)
    for s in range(n):
        p = pts[s]
        ci = min(max(int(np.floor((p[0] + 1.0) / spacing)), 0), res - 1)
        cj = min(max(int(np.floor((p[1] + 1.0) / spacing)), 0), res - 1)
        ck = min(max(int(np.floor((p[2] + 1.0) / spacing)), 0), res - 1)
        best = -np.inf
        best_t = -1
        # own cell first, then the 26 neighbours; stop as soon as the point is inside
        for ring in range(2):
            for dk in range(-ring, ring + 1):
                for dj in range(-ring, ring + 1):
                    for di in range(-ring, ring + 1):
                        if ring == 1 and di == 0 and dj == 0 and dk == 0:
                            continue
                        a = ci + di; b = cj + dj; c = ck + dk
                        if a < 0 or b < 0 or c < 0 or a >= res or b >= res or c >= res:
                            continue
                        cell = a + res * (b + res * c)
                        for q in range(6):
                            t = cell * 6 + q
                            m = _bary(x, tets[t], p, cand)
                            if m > best:
                                best = m
                                best_t = t
                                bary[s, :] = cand
            if best >= -tol:
                break
        if best >= -tol:
            tet_id[s] = best_t
        else:
            tet_id[s] = -1
    return tet_id, bary


def locate_points(grid: TetGrid, positions: np.ndarray, pts: np.ndarray,
                  tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Containing tet and barycentric coordinates of each point in the deformed grid."""
    pts = np.ascontiguousarray(pts, dtype=float)
    tet_id, bary = _locate(np.ascontiguousarray(positions), grid.tets, pts,
                           grid.resolution, grid.spacing, tol)
    missing = np.flatnonzero(tet_id < 0)
    if len(missing):
        i = int(missing[0])
        raise PointLocationError(f"sample {i} at {pts[i].tolist()} lies outside every "
                                 f"deformed tet ({len(missing)} sample(s) affected)")
    return tet_id, bary


def interpolate(grid: TetGrid, params: FieldParams, pts: np.ndarray) -> np.ndarray:
    """Field value at arbitrary points by barycentric interpolation in the deformed grid."""
    tet_id, bary = locate_points(grid, params.positions(grid), pts)
    return (bary * params.sdf[grid.tets[tet_id]]).sum(axis=1)


def prior_fit_loss(grid: TetGrid, params: FieldParams, samples: PointSamples,
                   lambda_def: float = 0.1) -> tuple[float, FieldParams]:
    """Squared SDF residual at the samples plus an L2-norm penalty on every offset.

    Returns the loss and its exact gradient as a FieldParams.  Moving a tet
    corner ``k`` by ``d`` changes the interpolated value at a fixed point by
    ``-bary_k * (grad s . d)``, where ``grad s`` is the tet's field gradient.
    """
    if len(samples) == 0:
        raise ValueError("prior_fit_loss needs at least one sample")
    x = params.positions(grid)
    tet_id, bary = locate_points(grid, x, samples.positions)
    corners = grid.tets[tet_id]  # (M, 4)
    s_c = params.sdf[corners]
    s = (bary * s_c).sum(axis=1)
    resid = s - samples.target

    xc = x[corners]
    edges = xc[:, 1:] - xc[:, :1]  # rows are edge vectors
    ds = s_c[:, 1:] - s_c[:, :1]
    gfield = np.linalg.solve(edges, ds[..., None])[..., 0]

    norms = np.linalg.norm(params.offset, axis=1)
    loss = float(resid @ resid + lambda_def * norms.sum())

    w = 2.0 * resid[:, None] * bary  # (M, 4)
    n = grid.n_vertices
    g_sdf = np.bincount(corners.ravel(), weights=w.ravel(), minlength=n)
    gx = -(w[:, :, None] * gfield[:, None, :]).reshape(-1, 3)
    flat = corners.ravel()
    g_off = np.stack([np.bincount(flat, weights=gx[:, k], minlength=n) for k in range(3)], axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    g_off += lambda_def * np.where(norms[:, None] > 0, params.offset / safe[:, None], 0.0)
    return loss, FieldParams(g_sdf, g_off)


# ---------------------------------------------------------------------------
# fitting loop
# ---------------------------------------------------------------------------

@dataclass
class FitConfig:
    iterations: int = 500
    lr: float = 1e-2
    lr_final: float = 5e-3
    lambda_def: float = 0.1
    n_surface: int = 2000
    n_near: int = 2000
    n_uniform: int = 8000
    band: float = 0.1
    n_held_out: int = 1000
    grid_vertices: bool = True  # also fit the oracle value at every undeformed grid vertex
    seed: int = 0


@dataclass
class FitReport:
    final_loss: float
    iterations: int
    held_out_mae: float
    losses: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {"final_loss": self.final_loss, "iterations": self.iterations,
                "held_out_mae": self.held_out_mae}


def held_out_mae(grid: TetGrid, params: FieldParams, scene: PriorScene, n: int,
                 seed: int) -> float:
    pts = np.random.default_rng([seed, 1]).uniform(-1.0, 1.0, size=(n, 3))
    return float(np.abs(interpolate(grid, params, pts) - scene.sdf(pts)).mean())


def fit_prior(grid: TetGrid, scene: PriorScene, cfg: FitConfig | None = None,
              samples: PointSamples | None = None,
              init: FieldParams | None = None) -> tuple[FieldParams, FitReport]:
    cfg = cfg or FitConfig()
    scene.validate_in_box()
    params = init.copy() if init is not None else FieldParams.zeros(grid)
    if samples is None:
        samples = sample_prior_points(scene, (cfg.n_surface, cfg.n_near, cfg.n_uniform),
                                      cfg.band, cfg.seed)
        if cfg.grid_vertices:
            samples = PointSamples(np.concatenate([samples.positions, grid.vertices]),
                                   np.concatenate([samples.target, scene.sdf(grid.vertices)]))
    samples = samples.canonical()
    state = OptimState(lr=cfg.lr, lr_final=cfg.lr_final, total_steps=cfg.iterations)
    losses = []
    for it in range(cfg.iterations):
        loss, grad = prior_fit_loss(grid, params, samples, cfg.lambda_def)
        if not np.isfinite(loss):
            raise FloatingPointError(f"prior fit loss became non-finite at iteration {it}")
        losses.append(loss)
        new = adam_step(params.as_dict(), grad.as_dict(), state)
        params = FieldParams(new["sdf"], project_offsets(grid, new["offset"]))
    loss, _ = prior_fit_loss(grid, params, samples, cfg.lambda_def)
    if cfg.iterations:
        log.info("fit_prior: %d iterations, final loss %.6g", cfg.iterations, loss)
    mae = held_out_mae(grid, params, scene, cfg.n_held_out, cfg.seed) if cfg.n_held_out else float("nan")
    return params, FitReport(float(loss), cfg.iterations, mae, losses)
