"""Tetrahedral lattice over the cube ``[-1, 1]^3``.

Each cubic cell is split into six tetrahedra along its main diagonal
(Kuhn/Freudenthal split).  Every cell uses the same diagonal direction, so
the triangulation is conforming across cell faces.
"""
from __future__ import annotations

from functools import cached_property
from itertools import permutations

import numpy as np

# local edge order inside a tet; marching tets and the edge table rely on it
TET_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])


def _cell_tets() -> np.ndarray:
    """Six tets of the unit cube as corner offsets, positively oriented."""
    out = []
    for perm in permutations(range(3)):
        corner = np.zeros(3, dtype=int)
        tet = [corner.copy()]
        for axis in perm:
            corner[axis] += 1
            tet.append(corner.copy())
        tet = np.array(tet)
        e = (tet[1:] - tet[0]).astype(float)
        if np.linalg.det(e) < 0:
            tet[[1, 2]] = tet[[2, 1]]
        out.append(tet)
    return np.array(out)  # (6, 4, 3)


class TetGrid:
    """Static tetrahedral grid with ``resolution`` cells per axis."""

    def __init__(self, resolution: int):
        if resolution < 1:
            raise ValueError("resolution must be >= 1")
        r = int(resolution)
        self.resolution = r
        self.spacing = 2.0 / r
        n = r + 1
        lin = np.linspace(-1.0, 1.0, n)
        k, j, i = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        self._ijk = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
        verts = lin[self._ijk]
        verts.setflags(write=False)
        self.vertices = verts

        ci, cj, ck = np.meshgrid(np.arange(r), np.arange(r), np.arange(r), indexing="ij")
        # cell index = ci + r*(cj + r*ck); iterate cells in that order
        cells = np.stack([ci.transpose(2, 1, 0).ravel(), cj.transpose(2, 1, 0).ravel(),
                          ck.transpose(2, 1, 0).ravel()], axis=1)
        offs = _cell_tets()
        corners = cells[:, None, None, :] + offs[None]  # (C, 6, 4, 3)
        idx = corners[..., 0] + n * (corners[..., 1] + n * corners[..., 2])
        self.tets = idx.reshape(-1, 4).astype(np.int64)
        self.tets.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @cached_property
    def _edges(self):
        pairs = self.tets[:, TET_EDGES]  # (T, 6, 2)
        pairs = np.sort(pairs, axis=2).reshape(-1, 2)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 6)

    @property
    def edges(self) -> np.ndarray:
        """Canonical ``(min, max)`` vertex pairs, sorted lexicographically."""
        return self._edges[0]

    @property
    def tet_edges(self) -> np.ndarray:
        """``(T, 6)`` global edge ids in :data:`TET_EDGES` order."""
        return self._edges[1]

    @cached_property
    def boundary_axes(self) -> np.ndarray:
        """``(N, 3)`` bool; True where the vertex sits on the cube face normal to that axis."""
        return (self._ijk == 0) | (self._ijk == self.resolution)

    def signed_volumes(self, positions: np.ndarray | None = None) -> np.ndarray:
        x = self.vertices if positions is None else positions
        t = x[self.tets]
        e = t[:, 1:] - t[:, :1]
        return np.linalg.det(e) / 6.0

    def cell_of(self, p: np.ndarray) -> np.ndarray:
        """Integer cell coordinates of points (clamped into the grid)."""
        c = np.floor((np.asarray(p) + 1.0) / self.spacing).astype(np.int64)
        return np.clip(c, 0, self.resolution - 1)
