"""Differentiable marching tetrahedra.

Surface vertices sit on sign-changing grid edges; each carries its edge
``(a, b)`` and interpolation parameter ``t`` so gradients with respect to
the per-vertex sdf values and offsets can be recovered exactly.  Topology
(the sign pattern) is treated as locally constant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import FieldParams
from .grid import TET_EDGES, TetGrid

ZERO_EPS = 1e-12


class ProvenanceError(ValueError):
    pass


@dataclass
class SurfaceMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (F, 3) int
    edges: np.ndarray | None = None  # (V, 2) grid vertex ids, a < b
    t: np.ndarray | None = None  # (V,) crossing parameter measured from edges[:, 0]
    edge_ids: np.ndarray | None = None  # (V,) index into grid.edges

    @property
    def face_normals(self) -> np.ndarray:
        return face_normals(self.vertices, self.triangles)

    def __len__(self):
        return len(self.triangles)


def apply_epsilon(sdf: np.ndarray) -> np.ndarray:
    return np.where(np.abs(sdf) < ZERO_EPS, ZERO_EPS, sdf)


def edge_interp(p_a, p_b, s_a: float, s_b: float):
    """Zero crossing of the linear interpolant along ``p_a -> p_b``."""
    s_a, s_b = apply_epsilon(np.array([s_a, s_b], float))
    if (s_a < 0) == (s_b < 0):
        raise ValueError("edge_interp needs endpoint values of opposite sign")
    t = s_a / (s_a - s_b)
    p_a = np.asarray(p_a, float)
    return p_a + t * (np.asarray(p_b, float) - p_a), float(t)


def face_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    if len(triangles) == 0:
        return np.zeros((0, 3))
    v = vertices[triangles]
    c = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    n = np.linalg.norm(c, axis=1, keepdims=True)
    out = c / np.where(n > 0, n, 1.0)
    # a zero-area face has no direction; give it a fixed unit normal
    out[n[:, 0] == 0] = (0.0, 0.0, 1.0)
    return out


def face_normals_backward(vertices: np.ndarray, triangles: np.ndarray,
                          grad_normals: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`face_normals`: per-vertex gradient from per-face gradient."""
    out = np.zeros_like(vertices)
    if len(triangles) == 0:
        return out
    v = vertices[triangles]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    c = np.cross(e1, e2)
    norm = np.linalg.norm(c, axis=1, keepdims=True)
    ok = norm[:, 0] > 0
    safe = np.where(norm > 0, norm, 1.0)
    n = c / safe
    gc = (grad_normals - n * (n * grad_normals).sum(axis=1, keepdims=True)) / safe
    gc[~ok] = 0.0
    g1 = np.cross(e2, gc)
    g2 = np.cross(gc, e1)
    g0 = -(g1 + g2)
    for k, g in enumerate((g0, g1, g2)):
        for d in range(3):
            out[:, d] += np.bincount(triangles[:, k], weights=g[:, d], minlength=len(vertices))
    return out


# For a tet sign code, the triangles as triples of local edge ids (TET_EDGES order).
# Two-negative codes store the quad cycle instead; the diagonal is picked per tet.
_LOCAL_EDGE = {tuple(e): i for i, e in enumerate(TET_EDGES.tolist())}


def _le(a, b):
    return _LOCAL_EDGE[(min(a, b), max(a, b))]


def _build_tables():
    tri = {}
    quad = {}
    for code in range(16):
        neg = [k for k in range(4) if code >> k & 1]
        pos = [k for k in range(4) if not code >> k & 1]
        if len(neg) == 1 or len(neg) == 3:
            apex = neg[0] if len(neg) == 1 else pos[0]
            others = [k for k in range(4) if k != apex]
            tri[code] = [_le(apex, o) for o in others]
        elif len(neg) == 2:
            a, b = neg
            c, d = pos
            quad[code] = [_le(a, c), _le(a, d), _le(b, d), _le(b, c)]
    return tri, quad


TRI_TABLE, QUAD_TABLE = _build_tables()


def marching_tets(grid: TetGrid, params: FieldParams) -> SurfaceMesh:
    s = apply_epsilon(np.asarray(params.sdf, float))
    x = params.positions(grid)
    neg = s < 0
    tets = grid.tets
    codes = (neg[tets] * np.array([1, 2, 4, 8])).sum(axis=1)
    n_neg = neg[tets].sum(axis=1)
    active = np.flatnonzero((n_neg > 0) & (n_neg < 4))
    if len(active) == 0:
        return SurfaceMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64), np.zeros((0, 2), np.int64),
                           np.zeros(0), np.zeros(0, np.int64))

    edges = grid.edges
    crossing = neg[edges[:, 0]] != neg[edges[:, 1]]
    edge_ids = np.flatnonzero(crossing)
    vmap = np.full(len(edges), -1, np.int64)
    vmap[edge_ids] = np.arange(len(edge_ids))
    ea, eb = edges[edge_ids, 0], edges[edge_ids, 1]
    t = s[ea] / (s[ea] - s[eb])
    verts = x[ea] + t[:, None] * (x[eb] - x[ea])

    tri_list = []
    tet_edges = grid.tet_edges
    for tid in active:
        code = int(codes[tid])
        ge = tet_edges[tid]
        if code in TRI_TABLE:
            tri_list.append((tid, [vmap[ge[le]] for le in TRI_TABLE[code]]))
        else:
            cyc = [ge[le] for le in QUAD_TABLE[code]]
            # diagonal through the smallest global edge id
            k = int(np.argmin(cyc))
            q = [vmap[cyc[(k + j) % 4]] for j in range(4)]
            tri_list.append((tid, [q[0], q[1], q[2]]))
            tri_list.append((tid, [q[0], q[2], q[3]]))
    tids = np.array([tid for tid, _ in tri_list], np.int64)
    tris = np.array([tr for _, tr in tri_list], np.int64)

    # orient each triangle from the negative to the positive side of its tet
    tv = x[tets[tids]]
    negm = neg[tets[tids]]
    c_neg = (tv * negm[..., None]).sum(1) / negm.sum(1, keepdims=True)
    c_pos = (tv * ~negm[..., None]).sum(1) / (~negm).sum(1, keepdims=True)
    v = verts[tris]
    nrm = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    flip = (nrm * (c_pos - c_neg)).sum(axis=1) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return SurfaceMesh(verts, tris, np.stack([ea, eb], axis=1), t, edge_ids)


def mt_backward(grid: TetGrid, params: FieldParams, mesh: SurfaceMesh,
                grad_vertices: np.ndarray) -> FieldParams:
    """Chain a per-surface-vertex gradient back to sdf values and offsets."""
    grad_vertices = np.asarray(grad_vertices, float)
    if mesh.edges is None:
        raise ProvenanceError("mesh carries no grid provenance")
    if grad_vertices.shape != mesh.vertices.shape:
        raise ProvenanceError(f"gradient shape {grad_vertices.shape} does not match "
                              f"{mesh.vertices.shape} surface vertices")
    n = grid.n_vertices
    if len(mesh.edges) and (mesh.edges.min() < 0 or mesh.edges.max() >= n):
        raise ProvenanceError("provenance edge refers to a vertex outside the grid")
    s = apply_epsilon(np.asarray(params.sdf, float))
    ea, eb = mesh.edges[:, 0], mesh.edges[:, 1]
    sa, sb = s[ea], s[eb]
    if np.any((sa < 0) == (sb < 0)):
        raise ProvenanceError("mesh was not extracted from these parameters (edge without crossing)")
    x = params.positions(grid)
    d = x[eb] - x[ea]
    denom = (sa - sb) ** 2
    dt_dsa = -sb / denom
    dt_dsb = sa / denom
    gd = (grad_vertices * d).sum(axis=1)
    g_sdf = (np.bincount(ea, weights=gd * dt_dsa, minlength=n)
             + np.bincount(eb, weights=gd * dt_dsb, minlength=n))
    t = sa / (sa - sb)
    wa = (1.0 - t)[:, None] * grad_vertices
    wb = t[:, None] * grad_vertices
    g_off = np.stack([np.bincount(ea, weights=wa[:, k], minlength=n)
                      + np.bincount(eb, weights=wb[:, k], minlength=n) for k in range(3)], axis=1)
    return FieldParams(g_sdf, g_off)


def edge_census(mesh: SurfaceMesh) -> dict:
    """Undirected edge usage counts and directed-edge consistency of a triangle mesh."""
    tris = mesh.triangles
    if len(tris) == 0:
        return {"edges": 0, "boundary": 0, "nonmanifold": 0, "inconsistent": 0}
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    und = np.sort(directed, axis=1)
    uniq, inv, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    # an undirected edge used twice must appear once in each direction
    fwd = (directed[:, 0] < directed[:, 1]).astype(int)
    fwd_count = np.bincount(inv, weights=fwd, minlength=len(uniq))
    two = counts == 2
    return {
        "edges": int(len(uniq)),
        "boundary": int((counts == 1).sum()),
        "nonmanifold": int((counts > 2).sum()),
        "inconsistent": int((two & (fwd_count != 1)).sum()),
    }


def is_watertight(mesh: SurfaceMesh) -> bool:
    c = edge_census(mesh)
    return c["edges"] > 0 and c["boundary"] == 0 and c["nonmanifold"] == 0 and c["inconsistent"] == 0
