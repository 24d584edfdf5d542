"""Camera sampling and a z-buffered software rasterizer.

Two shading modes share one visibility pass: world-space face normals
encoded as ``(n + 1) / 2`` and Lambertian colour from interpolated vertex
albedo.  Coverage is not differentiable; gradients flow through the
shaded attribute only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .field import FieldParams
from .grid import TetGrid
from .tessellate import SurfaceMesh, face_normals, face_normals_backward, marching_tets

NEAR = 1e-3
MIN_AREA = 1e-12


@dataclass(frozen=True)
class CameraPose:
    radius: float = 2.5
    elevation: float = 0.0
    azimuth: float = 0.0
    fov_y: float = 45.0
    height: int = 64
    width: int = 64

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("camera radius must be > 0")
        if not 0.0 < self.fov_y < 180.0:
            raise ValueError("fov_y must lie in (0, 180) degrees")
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError("elevation must lie in [-90, 90] degrees")

    @property
    def position(self) -> np.ndarray:
        el, az = math.radians(self.elevation), math.radians(self.azimuth)
        return self.radius * np.array([math.cos(el) * math.sin(az), math.sin(el),
                                       math.cos(el) * math.cos(az)])

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Right, up and forward unit vectors (look-at origin, +y up)."""
        eye = self.position
        fwd = -eye / np.linalg.norm(eye)
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            right = np.array([1.0, 0.0, 0.0]) if self.elevation < 0 else np.array([-1.0, 0.0, 0.0])
            right = np.cross(fwd, np.cross(right, fwd))
        right /= np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        return right, true_up, fwd

    def project(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates ``(x right, y down)`` and view depth of world points."""
        right, up, fwd = self.basis()
        rel = np.asarray(pts, float) - self.position
        xc, yc, zc = rel @ right, rel @ up, rel @ fwd
        f = 1.0 / math.tan(math.radians(self.fov_y) / 2.0)
        aspect = self.width / self.height
        safe = np.where(np.abs(zc) > 1e-300, zc, 1e-300)
        ndc_x = f * xc / safe / aspect
        ndc_y = f * yc / safe
        px = (ndc_x + 1.0) * 0.5 * self.width
        py = (1.0 - ndc_y) * 0.5 * self.height
        return np.stack([px, py], axis=1), zc


def sample_cameras(b: int = 2, l: int = 4, elev_range=(-30.0, 30.0), radius: float = 2.5,
                   fov_y: float = 45.0, resolution=(64, 64), seed: int = 0) -> list[CameraPose]:
    """``b`` uniform azimuths in each of ``l`` equal intervals of [-180, 180)."""
    if b < 1 or l < 1:
        raise ValueError("b and l must be >= 1")
    rng = np.random.default_rng(seed)
    h, w = (resolution, resolution) if np.isscalar(resolution) else resolution
    width = 360.0 / l
    out = []
    for k in range(l):
        lo = -180.0 + k * width
        for _ in range(b):
            az = float(rng.uniform(lo, lo + width))
            el = float(rng.uniform(elev_range[0], elev_range[1]))
            out.append(CameraPose(radius, el, az, fov_y, int(h), int(w)))
    return out


# ---------------------------------------------------------------------------
# visibility
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _raster(xy, invz, tris, draw, height, width):
    tri_id = np.full((height, width), -1, np.int64)
    zbuf = np.full((height, width), -np.inf)
    bary = np.zeros((height, width, 3))
    for f in range(tris.shape[0]):
        if not draw[f]:
            continue
        i0 = tris[f, 0]; i1 = tris[f, 1]; i2 = tris[f, 2]
        x0 = xy[i0, 0]; y0 = xy[i0, 1]
        x1 = xy[i1, 0]; y1 = xy[i1, 1]
        x2 = xy[i2, 0]; y2 = xy[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if abs(area) <= 1e-12:
            continue
        if area < 0:
            # swap to a fixed winding; remember the permutation for barycentrics
            i1, i2 = i2, i1
            x1, y1, x2, y2 = x2, y2, x1, y1
            area = -area
            swapped = True
        else:
            swapped = False
        xmin = max(int(math.floor(min(x0, min(x1, x2)))), 0)
        xmax = min(int(math.ceil(max(x0, max(x1, x2)))), width - 1)
        ymin = max(int(math.floor(min(y0, min(y1, y2)))), 0)
        ymax = min(int(math.ceil(max(y0, max(y1, y2)))), height - 1)
        # top-left rule per edge (edge k is opposite vertex k)
        ex0 = x2 - x1; ey0 = y2 - y1
        ex1 = x0 - x2; ey1 = y0 - y2
        ex2 = x1 - x0; ey2 = y1 - y0
        tl0 = (ey0 == 0 and ex0 > 0) or ey0 < 0
        tl1 = (ey1 == 0 and ex1 > 0) or ey1 < 0
        tl2 = (ey2 == 0 and ex2 > 0) or ey2 < 0
        for py in range(ymin, ymax + 1):
            cy = py + 0.5
            for px in range(xmin, xmax + 1):
                cx = px + 0.5
                w0 = ex0 * (cy - y1) - ey0 * (cx - x1)
                w1 = ex1 * (cy - y2) - ey1 * (cx - x2)
                w2 = ex2 * (cy - y0) - ey2 * (cx - x0)
                if w0 < 0 or w1 < 0 or w2 < 0:
                    continue
                if (w0 == 0 and not tl0) or (w1 == 0 and not tl1) or (w2 == 0 and not tl2):
                    continue
                b0 = w0 / area; b1 = w1 / area; b2 = w2 / area
                iz = b0 * invz[i0] + b1 * invz[i1] + b2 * invz[i2]
                if iz > zbuf[py, px]:
                    zbuf[py, px] = iz
                    tri_id[py, px] = f
                    # perspective-correct weights, in the face's original vertex order
                    q0 = b0 * invz[i0] / iz; q1 = b1 * invz[i1] / iz; q2 = b2 * invz[i2] / iz
                    bary[py, px, 0] = q0
                    if swapped:
                        bary[py, px, 1] = q2
                        bary[py, px, 2] = q1
                    else:
                        bary[py, px, 1] = q1
                        bary[py, px, 2] = q2
    return tri_id, bary


@dataclass
class Fragments:
    """Per-pixel winning face (-1 = background) and perspective-correct barycentrics."""

    tri_id: np.ndarray
    bary: np.ndarray
    n_vertices: int
    n_faces: int

    @property
    def mask(self) -> np.ndarray:
        return self.tri_id >= 0


def rasterize(mesh: SurfaceMesh, camera: CameraPose) -> Fragments:
    h, w = camera.height, camera.width
    nv, nf = len(mesh.vertices), len(mesh.triangles)
    if nf == 0:
        return Fragments(np.full((h, w), -1, np.int64), np.zeros((h, w, 3)), nv, 0)
    xy, z = camera.project(mesh.vertices)
    tris = np.ascontiguousarray(mesh.triangles, dtype=np.int64)
    normals = face_normals(mesh.vertices, tris)
    v0 = mesh.vertices[tris[:, 0]]
    front = ((camera.position - v0) * normals).sum(axis=1) > 0
    in_front = (z[tris] > NEAR).all(axis=1)
    invz = np.where(z > NEAR, 1.0 / np.maximum(z, NEAR), 0.0)
    tri_id, bary = _raster(np.ascontiguousarray(xy), invz, tris, front & in_front, h, w)
    return Fragments(tri_id, bary, nv, nf)


# ---------------------------------------------------------------------------
# shading
# ---------------------------------------------------------------------------

@dataclass
class NormalMap:
    pixels: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) bool
    fragments: Fragments | None = field(default=None, repr=False)

    def decode(self) -> np.ndarray:
        return self.pixels * 2.0 - 1.0


def encode_normals(n: np.ndarray) -> np.ndarray:
    return (np.asarray(n) + 1.0) * 0.5


def decode_normals(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels) * 2.0 - 1.0


def rasterize_normals(mesh: SurfaceMesh, camera: CameraPose) -> NormalMap:
    """Encoded face normals of the visible surface; background pixels are (0, 0, 0)."""
    frags = rasterize(mesh, camera)
    mask = frags.mask
    pix = np.zeros((camera.height, camera.width, 3))
    if mask.any():
        pix[mask] = encode_normals(face_normals(mesh.vertices, mesh.triangles)[frags.tri_id[mask]])
    return NormalMap(pix, mask, frags)


def normals_backward(mesh: SurfaceMesh, normal_map: NormalMap,
                     grad_pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient w.r.t. face normals and mesh vertices from a gradient on the encoded map."""
    frags = normal_map.fragments
    _check(frags, mesh, grad_pixels)
    mask = frags.mask
    ids = frags.tri_id[mask]
    g = 0.5 * np.asarray(grad_pixels)[mask]
    gn = np.stack([np.bincount(ids, weights=g[:, k], minlength=frags.n_faces) for k in range(3)], axis=1)
    return gn, face_normals_backward(mesh.vertices, mesh.triangles, gn)


@dataclass
class AlbedoField:
    """RGB albedo stored per grid vertex and interpolated along crossing edges."""

    values: np.ndarray  # (N, 3)

    @classmethod
    def constant(cls, grid: TetGrid, rgb=(0.5, 0.5, 0.5)) -> "AlbedoField":
        return cls(np.tile(np.asarray(rgb, float), (grid.n_vertices, 1)))

    def read(self) -> np.ndarray:
        return np.clip(self.values, 0.0, 1.0)

    def surface_colors(self, mesh: SurfaceMesh) -> np.ndarray:
        if mesh.edges is None:
            raise ValueError("mesh carries no grid provenance; pass per-vertex colours instead")
        a = self.read()
        t = mesh.t[:, None]
        return (1.0 - t) * a[mesh.edges[:, 0]] + t * a[mesh.edges[:, 1]]

    def surface_backward(self, mesh: SurfaceMesh, grad_colors: np.ndarray) -> np.ndarray:
        n = len(self.values)
        t = mesh.t
        inside = (self.values >= 0.0) & (self.values <= 1.0)
        out = np.zeros((n, 3))
        for k in range(3):
            out[:, k] = (np.bincount(mesh.edges[:, 0], weights=(1.0 - t) * grad_colors[:, k], minlength=n)
                         + np.bincount(mesh.edges[:, 1], weights=t * grad_colors[:, k], minlength=n))
        return out * inside


@dataclass
class ColorImage:
    pixels: np.ndarray
    mask: np.ndarray
    fragments: Fragments | None = field(default=None, repr=False)
    # cached shading terms for the backward pass
    albedo: np.ndarray | None = field(default=None, repr=False)
    lambert: np.ndarray | None = field(default=None, repr=False)


def rasterize_color(mesh: SurfaceMesh, albedo, camera: CameraPose, light) -> ColorImage:
    """Lambertian shading ``albedo * max(0, n . light)`` clamped to [0, 1].

    ``albedo`` is an :class:`AlbedoField` (mesh needs provenance) or an
    ``(V, 3)`` array of per-surface-vertex colours.
    """
    colors = albedo.surface_colors(mesh) if isinstance(albedo, AlbedoField) \
        else np.clip(np.asarray(albedo, float), 0.0, 1.0)
    light = np.asarray(light, float)
    light = light / np.linalg.norm(light)
    frags = rasterize(mesh, camera)
    mask = frags.mask
    h, w = camera.height, camera.width
    pix = np.zeros((h, w, 3))
    alb = np.zeros((h, w, 3))
    lam = np.zeros((h, w))
    if mask.any():
        ids = frags.tri_id[mask]
        b = frags.bary[mask]
        corners = mesh.triangles[ids]
        alb[mask] = (b[:, :, None] * colors[corners]).sum(axis=1)
        lam[mask] = np.maximum(0.0, face_normals(mesh.vertices, mesh.triangles)[ids] @ light)
        pix[mask] = np.clip(alb[mask] * lam[mask][:, None], 0.0, 1.0)
    return ColorImage(pix, mask, frags, alb, lam)


def color_backward(mesh: SurfaceMesh, image: ColorImage, grad_pixels: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. per-surface-vertex colours (geometry held fixed)."""
    frags = image.fragments
    _check(frags, mesh, grad_pixels)
    mask = frags.mask
    out = np.zeros((len(mesh.vertices), 3))
    if not mask.any():
        return out
    raw = image.albedo[mask] * image.lambert[mask][:, None]
    live = (raw > 0.0) & (raw < 1.0)
    g = np.asarray(grad_pixels)[mask] * live * image.lambert[mask][:, None]
    corners = mesh.triangles[frags.tri_id[mask]]
    b = frags.bary[mask]
    for j in range(3):
        for k in range(3):
            out[:, k] += np.bincount(corners[:, j], weights=b[:, j] * g[:, k], minlength=len(out))
    return out


def raster_backward(mesh: SurfaceMesh, image, grad_pixels: np.ndarray):
    """Dispatch on the forward result: normal maps give (face-normal, vertex) gradients,
    colour images give per-vertex colour gradients."""
    if isinstance(image, NormalMap):
        return normals_backward(mesh, image, grad_pixels)
    return color_backward(mesh, image, grad_pixels)


def _check(frags: Fragments | None, mesh: SurfaceMesh, grad: np.ndarray) -> None:
    if frags is None:
        raise ValueError("image carries no fragments; render it with this module")
    if frags.n_faces != len(mesh.triangles) or frags.n_vertices != len(mesh.vertices):
        raise ValueError("backward mesh does not match the mesh used in the forward pass")
    if np.shape(grad)[:2] != frags.tri_id.shape:
        raise ValueError(f"gradient shape {np.shape(grad)} does not match image {frags.tri_id.shape}")


def render_params(grid: TetGrid, params: FieldParams, camera: CameraPose) -> NormalMap:
    return rasterize_normals(marching_tets(grid, params), camera)
