"""Shared test helpers: reference meshes, oracle fields, finite differences, run configs."""
from pathlib import Path

import numpy as np

from sherpa_lift.field import FieldParams
from sherpa_lift.tessellate import SurfaceMesh

SPHERE_R = 0.6
ELLIPSOID_RADII = (0.6, 0.42, 0.42)  # the sphere scaled by (1, 0.7, 0.7)


def oracle_params(grid, scene) -> FieldParams:
    """Field holding the exact scene SDF at the undeformed grid vertices."""
    return FieldParams(scene.sdf(grid.vertices), np.zeros((grid.n_vertices, 3)))


def uv_sphere(radius=1.0, n_lat=24, n_lon=48) -> SurfaceMesh:
    """Outward-wound UV sphere; rotating it by 90 degrees about y maps it onto itself."""
    verts = [(0.0, radius, 0.0)]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append((radius * np.sin(th) * np.sin(ph), radius * np.cos(th),
                          radius * np.sin(th) * np.cos(ph)))
    verts.append((0.0, -radius, 0.0))
    v = np.array(verts)
    ring = lambda i, j: 1 + (i - 1) * n_lon + j % n_lon  # noqa: E731
    tris = [(0, ring(1, j), ring(1, j + 1)) for j in range(n_lon)]
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b, c, d = ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1)
            tris += [(a, c, d), (a, d, b)]
    last = len(v) - 1
    tris += [(last, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)) for j in range(n_lon)]
    t = np.array(tris)
    # make every face point away from the origin
    tv = v[t]
    n = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    flip = (n * tv.mean(axis=1)).sum(axis=1) < 0
    t[flip] = t[flip][:, [0, 2, 1]]
    return SurfaceMesh(v, t)


def flat_quad(z=0.0, half=1.0) -> SurfaceMesh:
    """Two triangles spanning [-half, half]^2 at height z, normal +z."""
    v = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    return SurfaceMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def central_fd(f, x, idx, h):
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


CONFIGS = Path(__file__).resolve().parent.parent / "configs"

TINY = {
    "grid.resolution": 6,
    "fit.iterations": 40,
    "fit.n_surface": 200,
    "fit.n_near": 200,
    "fit.n_uniform": 400,
    "fit.n_held_out": 100,
    "geometry.iterations": 3,
    "appearance.iterations": 2,
    "camera.b": 1,
    "camera.l": 2,
    "camera.res": 16,
}


def write_config(directory, **overrides) -> Path:
    """Write a fast run config into ``directory``; keys use ``section__name`` spelling."""
    values = {"scene.path": str(CONFIGS / "sphere.scene"), "scene.target": str(CONFIGS / "ellipsoid.scene"),
              "run.out": str(Path(directory) / "run"), **TINY}
    values.update({k.replace("__", "."): v for k, v in overrides.items()})
    path = Path(directory) / "tiny.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path


# criterion number -> (title, "PASS"/"FAIL", detail); printed by the terminal summary hook
ACCEPTANCE: dict[int, tuple[str, str, str]] = {}
