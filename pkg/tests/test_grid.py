import numpy as np
import numpy.testing as npt
import pytest

from sherpa_lift.grid import TET_EDGES, TetGrid


class TestTetGrid:
    @pytest.mark.parametrize("r", [1, 2, 5, 16])
    def test_counts(self, r):
        g = TetGrid(r)
        assert g.n_vertices == (r + 1) ** 3
        assert g.n_tets == 6 * r ** 3

    def test_vertices_span_the_cube(self):
        g = TetGrid(4)
        npt.assert_array_equal(g.vertices.min(axis=0), [-1, -1, -1])
        npt.assert_array_equal(g.vertices.max(axis=0), [1, 1, 1])
        assert g.spacing == 0.5

    def test_vertex_index_layout(self):
        g = TetGrid(3)
        n = 4
        i, j, k = 1, 2, 3
        npt.assert_array_equal(g.vertices[i + n * (j + n * k)], [-1 + 2 / 3, -1 + 4 / 3, 1.0])

    def test_positive_orientation(self):
        g = TetGrid(5)
        assert np.all(g.signed_volumes(g.vertices) > 0)

    def test_volumes_fill_the_cube(self):
        g = TetGrid(4)
        assert g.signed_volumes(g.vertices).sum() == pytest.approx(8.0, rel=1e-12)

    def test_edge_table_matches_tet_edges(self):
        g = TetGrid(3)
        pairs = np.sort(g.tets[:, TET_EDGES].reshape(-1, 2), axis=1)
        expect = np.unique(pairs, axis=0)
        npt.assert_array_equal(g.edges, expect)
        assert np.all(g.edges[:, 0] < g.edges[:, 1])
        # tet_edges points back at the right global edge
        npt.assert_array_equal(g.edges[g.tet_edges].reshape(-1, 2), pairs)

    def test_sixteen_cubed_edge_count(self):
        assert len(TetGrid(16).edges) == 31024

    def test_conforming_faces(self):
        # every interior triangular face is shared by exactly two tets
        g = TetGrid(3)
        faces = np.concatenate([g.tets[:, [0, 1, 2]], g.tets[:, [0, 1, 3]], g.tets[:, [0, 2, 3]],
                                g.tets[:, [1, 2, 3]]])
        _, counts = np.unique(np.sort(faces, axis=1), axis=0, return_counts=True)
        assert set(counts.tolist()) == {1, 2}
        assert (counts == 1).sum() == 6 * 2 * 3 * 3  # boundary: 2 triangles per boundary square

    def test_vertices_immutable(self):
        g = TetGrid(2)
        with pytest.raises(ValueError):
            g.vertices[0, 0] = 5.0

    def test_boundary_axes(self):
        g = TetGrid(2)
        b = g.boundary_axes
        npt.assert_array_equal(b, np.abs(g.vertices) == 1.0)

    def test_cell_of(self):
        g = TetGrid(4)
        npt.assert_array_equal(g.cell_of(np.array([[-1.0, -1.0, -1.0], [0.1, 0.6, 1.0]])),
                               [[0, 0, 0], [2, 3, 3]])

    def test_rejects_zero_resolution(self):
        with pytest.raises(ValueError):
            TetGrid(0)
