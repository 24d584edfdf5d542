"""Self-verification suites run by ``sherpa-lift check``.

Each suite returns a list of :class:`CheckResult`; a suite passes when every
property in it passes.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .field import FieldParams, PointSamples, prior_fit_loss, project_offsets
from .grid import TET_EDGES, TetGrid
from .guidance import (GuidanceConfig, PatchStatsEncoder, anneal, gaussian_filter,
                       gaussian_kernel1d, semantic_guidance, semantic_loss, structural_descriptor,
                       structural_loss)
from .optimize import ScoreBundle, geometry_loss
from .render import AlbedoField, CameraPose, color_backward, rasterize_color, rasterize_normals
from .scene import PriorScene, Sphere
from .score import (ConditionToken, PointMassProvider, WeightSchedule, cfg_combine, make_schedule,
                    perturb, sample_timestep, sds_image_gradient)
from .tessellate import edge_census, is_watertight, marching_tets


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}".rstrip()


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


# ---------------------------------------------------------------------------
# marching tets table
# ---------------------------------------------------------------------------

# reference tet used by the exhaustive sign-pattern check (irregular on purpose)
REF_TET = np.array([[0.0, 0.0, 0.0], [1.0, 0.1, 0.0], [0.2, 1.0, 0.1], [0.1, 0.3, 1.0]])


def single_tet_grid(vertices: np.ndarray = REF_TET):
    """Minimal grid-shaped object holding one tet; local edge ids equal global ones."""
    return SimpleNamespace(vertices=np.asarray(vertices, float), tets=np.array([[0, 1, 2, 3]]),
                           edges=TET_EDGES.copy(), tet_edges=np.arange(6)[None, :],
                           n_vertices=4)


def reference_zero_set(vertices: np.ndarray, sdf: np.ndarray):
    """Brute-force zero set of the linear interpolant on one tet.

    Returns the crossing points (one per sign-changing edge), the polygon's
    vector area (oriented towards the positive side) and the field gradient.
    """
    pts = []
    for a, b in TET_EDGES:
        if (sdf[a] < 0) != (sdf[b] < 0):
            t = sdf[a] / (sdf[a] - sdf[b])
            pts.append(vertices[a] + t * (vertices[b] - vertices[a]))
    e = vertices[1:] - vertices[0]
    grad = np.linalg.solve(e, sdf[1:] - sdf[0])
    if not pts:
        return np.zeros((0, 3)), np.zeros(3), grad
    pts = np.array(pts)
    c = pts.mean(axis=0)
    n = grad / np.linalg.norm(grad)
    u = pts[0] - c
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    order = np.argsort(np.arctan2((pts - c) @ v, (pts - c) @ u))
    poly = pts[order]
    area = 0.5 * sum(np.cross(poly[i] - c, poly[(i + 1) % len(poly)] - c) for i in range(len(poly)))
    return pts, area, grad


def check_sign_patterns(trials: int = 8, seed: int = 0) -> list[CheckResult]:
    grid = single_tet_grid()
    rng = np.random.default_rng(seed)
    out = []
    for code in range(16):
        neg = np.array([code >> k & 1 for k in range(4)], bool)
        n_neg = int(neg.sum())
        want_faces = {0: 0, 1: 1, 2: 2, 3: 1, 4: 0}[n_neg]
        ok, why = True, ""
        for _ in range(trials):
            mag = rng.uniform(0.1, 1.0, 4)
            sdf = np.where(neg, -mag, mag)
            mesh = marching_tets(grid, FieldParams(sdf, np.zeros((4, 3))))
            ref_pts, ref_area, grad = reference_zero_set(REF_TET, sdf)
            if len(mesh.triangles) != want_faces:
                ok, why = False, f"{len(mesh.triangles)} faces, expected {want_faces}"
                break
            if want_faces == 0:
                continue
            got = np.sort(np.round(mesh.vertices, 12), axis=0)
            if got.shape != ref_pts.shape or not np.allclose(got, np.sort(np.round(ref_pts, 12), axis=0), atol=1e-12):
                ok, why = False, "surface vertices differ from the edge crossings"
                break
            v = mesh.vertices[mesh.triangles]
            tri_area = 0.5 * np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
            if np.any(tri_area @ grad <= 0):
                ok, why = False, "a face points to the negative side"
                break
            if np.linalg.norm(tri_area.sum(axis=0) - ref_area) > 1e-12:
                ok, why = False, "faces do not tile the zero-set polygon"
                break
        out.append(CheckResult(f"mt sign pattern {code:04b}", ok, why))
    return out


def check_sphere_extraction(resolution: int = 16, radius: float = 0.6) -> list[CheckResult]:
    t0 = time.perf_counter()
    grid = TetGrid(resolution)
    scene = PriorScene(Sphere(radius=radius))
    mesh = marching_tets(grid, FieldParams(scene.sdf(grid.vertices), np.zeros((grid.n_vertices, 3))))
    dist = np.abs(np.linalg.norm(mesh.vertices, axis=1) - radius)
    census = edge_census(mesh)
    wall = time.perf_counter() - t0
    return [
        CheckResult("sphere vertices within one grid spacing", bool(dist.max() <= grid.spacing),
                    f"max distance {dist.max():.4g} (spacing {grid.spacing:.4g})"),
        CheckResult("sphere mesh watertight", is_watertight(mesh), str(census)),
        CheckResult("sphere extraction runtime < 5 s", wall < 5.0, f"{wall:.2f}s"),
    ]


def suite_mt_table() -> list[CheckResult]:
    return check_sign_patterns() + check_sphere_extraction()


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def _fd(f, x: np.ndarray, idx, h: float) -> np.ndarray:
    out = []
    for i in idx:
        old = x.flat[i]
        x.flat[i] = old + h
        fp = f()
        x.flat[i] = old - h
        fm = f()
        x.flat[i] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def check_prior_fit_gradient(seed: int = 0, tol: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    grid = TetGrid(4)
    scene = PriorScene(Sphere(radius=0.6))
    pts = rng.uniform(-0.95, 0.95, (200, 3))
    samples = PointSamples(pts, scene.sdf(pts))
    params = FieldParams(scene.sdf(grid.vertices) + 0.05 * rng.standard_normal(grid.n_vertices),
                         project_offsets(grid, 0.03 * rng.standard_normal((grid.n_vertices, 3))))
    _, g = prior_fit_loss(grid, params, samples, 0.1)
    f = lambda: prior_fit_loss(grid, params, samples, 0.1)[0]  # noqa: E731
    idx_s = rng.choice(grid.n_vertices, 20, replace=False)
    interior = np.flatnonzero(~grid.boundary_axes.any(axis=1))
    idx_o = (rng.choice(interior, 10, replace=False)[:, None] * 3 + np.arange(3)).ravel()
    fd = np.concatenate([_fd(f, params.sdf, idx_s, 1e-6), _fd(f, params.offset, idx_o, 1e-6)])
    an = np.concatenate([g.sdf[idx_s], g.offset.ravel()[idx_o]])
    err = _rel(an, fd)
    return CheckResult("prior_fit_loss gradient", err <= tol, f"rel err {err:.2e}")


def check_structural_gradient(seed: int = 0, tol: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = GuidanceConfig()
    prior = rng.uniform(0, 1, (16, 16, 3))
    live = rng.uniform(0, 1, (16, 16, 3))
    _, (g,) = structural_loss([prior], [live], cfg)
    f = lambda: structural_loss([prior], [live], cfg)[0]  # noqa: E731
    idx = rng.choice(live.size, 40, replace=False)
    err = _rel(g.ravel()[idx], _fd(f, live, idx, 1e-6))
    return CheckResult("structural_loss gradient", err <= tol, f"rel err {err:.2e}")


def check_semantic_gradient(seed: int = 0, tol: float = 1e-5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(48)
    b = rng.standard_normal(48)
    _, (g,) = semantic_loss([a], [b])
    err_f = _rel(g, _fd(lambda: semantic_loss([a], [b])[0], b, range(48), 1e-6))
    enc = PatchStatsEncoder()
    prior = rng.uniform(0, 1, (16, 16, 3))
    live = rng.uniform(0, 1, (16, 16, 3))
    _, (gp,) = semantic_guidance(enc, [prior], [live])
    idx = rng.choice(live.size, 40, replace=False)
    err_p = _rel(gp.ravel()[idx], _fd(lambda: semantic_guidance(enc, [prior], [live])[0], live, idx, 1e-6))
    return [CheckResult("semantic_loss gradient (features)", err_f <= tol, f"rel err {err_f:.2e}"),
            CheckResult("semantic_loss gradient (through encoder)", err_p <= tol, f"rel err {err_p:.2e}")]


def check_albedo_gradient(seed: int = 0, tol: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    grid = TetGrid(4)
    scene = PriorScene(Sphere(radius=0.6))
    mesh = marching_tets(grid, FieldParams(scene.sdf(grid.vertices), np.zeros((grid.n_vertices, 3))))
    albedo = AlbedoField(rng.uniform(0.2, 0.8, (grid.n_vertices, 3)))
    cam = CameraPose(2.5, 20.0, 35.0, 45.0, 16, 16)
    light = np.array([0.3, 0.8, 0.5])
    weights = rng.standard_normal((16, 16, 3))
    img = rasterize_color(mesh, albedo, cam, light)
    g = albedo.surface_backward(mesh, color_backward(mesh, img, weights))
    f = lambda: float((rasterize_color(mesh, albedo, cam, light).pixels * weights).sum())  # noqa: E731
    idx = np.flatnonzero(np.abs(g.ravel()) > 0)[:40]
    err = _rel(g.ravel()[idx], _fd(f, albedo.values, idx, 1e-6))
    return CheckResult("rasterize_color albedo gradient", err <= tol and len(idx) > 0,
                       f"rel err {err:.2e} over {len(idx)} entries")


def check_geometry_chain(seed: int = 0, tol: float = 1e-3) -> CheckResult:
    """Guidance-only (w = 0) gradient through rasterisation and marching tets."""
    rng = np.random.default_rng(seed)
    grid = TetGrid(4)
    scene = PriorScene(Sphere(radius=0.6))
    prior = FieldParams(scene.sdf(grid.vertices), np.zeros((grid.n_vertices, 3)))
    live = FieldParams(prior.sdf + 0.05 * rng.standard_normal(grid.n_vertices),
                       project_offsets(grid, 0.04 * rng.standard_normal((grid.n_vertices, 3))))
    cams = [CameraPose(2.5, 15.0, 30.0, 45.0, 16, 16), CameraPose(2.5, -10.0, 160.0, 45.0, 16, 16)]
    guidance = GuidanceConfig(lambda_struc=10.0, lambda_sem=30.0)
    sched = make_schedule()
    zero = ConditionToken("zero", np.zeros((16, 16, 3)))
    bundle = ScoreBundle(sched, PointMassProvider(sched), lambda c: zero, 0.0,
                         WeightSchedule("constant", 0.0), total_iterations=1)

    def objective():
        d, _ = geometry_loss(grid, prior, live, cams, guidance, bundle, 0)
        return d["gamma_struc"] * d["l_struc"] + d["gamma_sem"] * d["l_sem"]

    def assignment():
        mesh = marching_tets(grid, live)
        return [rasterize_normals(mesh, c).fragments.tri_id for c in cams]

    _, g = geometry_loss(grid, prior, live, cams, guidance, bundle, 0)
    base = assignment()
    h = 1e-7
    an, fd = [], []
    for block, arr, garr in (("sdf", live.sdf, g.sdf), ("offset", live.offset, g.offset)):
        cand = np.flatnonzero(np.abs(garr.ravel()) > 0)
        for i in rng.permutation(cand)[:15]:
            old = arr.flat[i]
            smooth = True
            vals = []
            for step in (h, -h):
                arr.flat[i] = old + step
                smooth &= all((a == b).all() for a, b in zip(assignment(), base))
                vals.append(objective())
            arr.flat[i] = old
            if smooth:  # pixel-to-face assignment unchanged: the objective is smooth here
                an.append(garr.flat[i])
                fd.append((vals[0] - vals[1]) / (2 * h))
    err = _rel(np.array(an), np.array(fd)) if an else math.inf
    return CheckResult("guidance-only geometry chain gradient", err <= tol,
                       f"rel err {err:.2e} over {len(an)} entries")


def suite_gradients() -> list[CheckResult]:
    t0 = time.perf_counter()
    out = [check_prior_fit_gradient(), check_structural_gradient(), *check_semantic_gradient(),
           check_albedo_gradient(), check_geometry_chain()]
    wall = time.perf_counter() - t0
    out.append(CheckResult("gradient suite runtime < 2 min", wall < 120.0, f"{wall:.1f}s"))
    return out


# ---------------------------------------------------------------------------
# filter / descriptor
# ---------------------------------------------------------------------------

def hand_kernel(sigma: float, radius: int) -> np.ndarray:
    """Gaussian taps written out longhand, normalised by their explicit sum."""
    taps = [math.exp(-(i * i) / (2.0 * sigma * sigma)) for i in range(-radius, radius + 1)]
    total = math.fsum(taps)
    return np.array([t / total for t in taps])


def suite_filter() -> list[CheckResult]:
    out = []
    worst = max(abs(gaussian_kernel1d(s, r).sum() - 1.0) for s, r in ((1.0, 3), (0.5, 2), (2.0, 6)))
    k2 = np.outer(gaussian_kernel1d(1.0, 3), gaussian_kernel1d(1.0, 3))
    worst = max(worst, abs(k2.sum() - 1.0))
    out.append(CheckResult("Gaussian kernel sums to 1", worst <= 1e-12, f"max |sum-1| {worst:.1e}"))

    img = np.zeros((15, 15))
    img[7, 7] = 1.0
    resp = gaussian_filter(img, 1.0, 3)
    ref = np.zeros((15, 15))
    ref[4:11, 4:11] = np.outer(hand_kernel(1.0, 3), hand_kernel(1.0, 3))
    err = float(np.abs(resp - ref).max())
    out.append(CheckResult("impulse response equals the hand-normalised kernel", err <= 1e-9,
                           f"max err {err:.1e}"))

    cfg = GuidanceConfig()
    const = np.full((16, 16, 3), 0.37)
    d = structural_descriptor(const, cfg)
    out.append(CheckResult("constant image gives an exactly zero descriptor", bool((d == 0).all()),
                           f"max {np.abs(d).max():.1e}"))
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (16, 16, 3))
    l0, _ = structural_loss([x], [x + 0.0], cfg)
    l1, _ = structural_loss([x], [x + np.array([0.1, -0.2, 0.05])], cfg)
    out.append(CheckResult("structural loss invariant to a per-channel constant", abs(l1 - l0) <= 1e-9,
                           f"|dL| {abs(l1 - l0):.1e}"))
    return out


# ---------------------------------------------------------------------------
# schedule / score identities / annealing
# ---------------------------------------------------------------------------

def free_image_sds(res: int = 8, steps: int = 500, lr: float = 1.0, seed: int = 0):
    """Plain gradient descent on a free image with the point-mass SDS gradient
    (s = 0, sigma-squared weight, uniform-random t).  Returns the MSE to the
    target after every step."""
    rng = np.random.default_rng(seed)
    sched = make_schedule()
    x_star = rng.uniform(0, 1, (res, res, 3))
    provider = PointMassProvider(sched, x_star)
    y = ConditionToken("target")
    w = WeightSchedule("sigma-squared")
    x = np.zeros_like(x_star)
    mse = []
    for it in range(steps):
        t = sample_timestep("uniform-random", it, steps, sched.T, seed)
        eps = rng.standard_normal(x.shape)
        g, _ = sds_image_gradient(provider, x, y, t, eps, 0.0, w, sched)
        x = x - lr * g
        mse.append(float(((x - x_star) ** 2).mean()))
    return mse


def suite_schedule() -> list[CheckResult]:
    out = []
    t0 = time.perf_counter()
    sched = make_schedule()
    vp = float(np.abs(sched.alpha ** 2 + sched.sigma ** 2 - 1.0).max())
    out.append(CheckResult("alpha^2 + sigma^2 = 1", vp <= 1e-9, f"max err {vp:.1e}"))
    mono = bool(np.all(np.diff(sched.alpha) < 0) and np.all(np.diff(sched.sigma) > 0))
    out.append(CheckResult("alpha decreasing, sigma increasing", mono))

    rng = np.random.default_rng(0)
    a = rng.standard_normal((8, 8, 3))
    same = all(np.array_equal(cfg_combine(a, a, s), a) for s in (0.0, 1.0, 7.5, 50.0))
    out.append(CheckResult("cfg_combine(a, a, s) = a", same))

    x_star = rng.uniform(0, 1, (8, 8, 3))
    provider = PointMassProvider(sched, x_star)
    worst = 0.0
    for t in (1, 20, 500, 980, 1000):
        eps = rng.standard_normal(x_star.shape)
        z = perturb(x_star, t, eps, sched)
        worst = max(worst, float(np.abs(provider.predict_noise(z, t, ConditionToken("x")) - eps).max()))
    out.append(CheckResult("point-mass provider recovers the injected noise", worst <= 1e-9,
                           f"max err {worst:.1e}"))

    mse = free_image_sds()
    first = next((i + 1 for i, m in enumerate(mse) if m < 1e-3), None)
    out.append(CheckResult("free-image SDS reaches MSE < 1e-3 within 500 steps", first is not None,
                           f"final MSE {mse[-1]:.2e}, first below at step {first}"))

    at_m = all(anneal(10.0, n, 0.5, 1000.0) == 10.0 for n in (0, 1, 500, 999, 1000))
    out.append(CheckResult("anneal = lambda for n <= m", at_m))
    val = anneal(10.0, 1002, 0.5, 1000.0)
    out.append(CheckResult("anneal(10, 1002; beta=0.5, m=1000) = 3.67879441",
                           abs(val - 3.67879441) <= 1e-6, f"{val:.8f}"))
    sweep = [anneal(10.0, n, 0.5, 1000.0) for n in range(0, 1200)]
    out.append(CheckResult("anneal non-increasing in n", all(b <= a for a, b in zip(sweep, sweep[1:]))))
    wall = time.perf_counter() - t0
    out.append(CheckResult("schedule suite runtime < 30 s", wall < 30.0, f"{wall:.1f}s"))
    return out


SUITES = {
    "mt-table": suite_mt_table,
    "gradients": suite_gradients,
    "filter": suite_filter,
    "schedule": suite_schedule,
}


def run_suite(name: str) -> list[CheckResult]:
    try:
        fn = SUITES[name]
    except KeyError:
        raise KeyError(f"unknown suite {name!r}; available: {', '.join(SUITES)}") from None
    return fn()
