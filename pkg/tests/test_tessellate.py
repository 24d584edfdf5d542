import numpy as np
import numpy.testing as npt
import pytest

from sherpa_lift.checks import REF_TET, check_sign_patterns, reference_zero_set, single_tet_grid
from sherpa_lift.field import FieldParams, project_offsets
from sherpa_lift.grid import TetGrid
from sherpa_lift.tessellate import (ProvenanceError, SurfaceMesh, edge_census, edge_interp,
                                    face_normals, face_normals_backward, is_watertight,
                                    marching_tets, mt_backward)

from helpers import SPHERE_R, central_fd, oracle_params


class TestEdgeInterp:
    @pytest.mark.parametrize("s_a, s_b, t", [(-1.0, 1.0, 0.5), (-1.0, 3.0, 0.25), (2.0, -2.0, 0.5),
                                             (0.3, -0.1, 0.75)])
    def test_examples(self, s_a, s_b, t):
        p, got = edge_interp((0, 0, 0), (2, 0, 0), s_a, s_b)
        assert got == pytest.approx(t, abs=1e-15)
        npt.assert_allclose(p, [2 * t, 0, 0], atol=1e-15)

    def test_same_sign_rejected(self):
        with pytest.raises(ValueError):
            edge_interp((0, 0, 0), (1, 0, 0), 0.2, 0.5)

    def test_exact_zero_counts_as_positive(self):
        _, t = edge_interp((0, 0, 0), (1, 0, 0), 0.0, -1.0)
        assert 0 < t < 1e-11

    def test_derivative_in_sdf_values(self):
        s = np.array([-0.3, 0.7])
        f = lambda: edge_interp((0, 0, 0), (1, 0, 0), s[0], s[1])[1]  # noqa: E731
        fd = central_fd(f, s, [0, 1], 1e-6)
        denom = (s[0] - s[1]) ** 2
        npt.assert_allclose(fd, [-s[1] / denom, s[0] / denom], rtol=1e-8)


class TestSignPatterns:
    @pytest.mark.parametrize("code", range(16))
    def test_single_tet_face_count(self, code):
        neg = np.array([code >> k & 1 for k in range(4)], bool)
        sdf = np.where(neg, -0.5, 0.5)
        mesh = marching_tets(single_tet_grid(), FieldParams(sdf, np.zeros((4, 3))))
        assert len(mesh.triangles) == {0: 0, 1: 1, 2: 2, 3: 1, 4: 0}[int(neg.sum())]
        assert len(mesh.vertices) == {0: 0, 1: 3, 2: 4, 3: 3, 4: 0}[int(neg.sum())]

    def test_all_patterns_match_the_reference(self):
        results = check_sign_patterns()
        assert len(results) == 16
        assert all(r.passed for r in results), [r.line() for r in results if not r.passed]

    def test_reference_area_of_a_corner_cut(self):
        # the midpoint cut around vertex 0 of the corner tet, oriented away from vertex 0
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
        _, area, _ = reference_zero_set(v, np.array([-1.0, 1.0, 1.0, 1.0]))
        npt.assert_allclose(area, [0.125, 0.125, 0.125], atol=1e-15)


class TestExtraction:
    def test_all_positive_gives_empty_mesh(self):
        g = TetGrid(3)
        mesh = marching_tets(g, FieldParams.zeros(g, 1.0))
        assert mesh.vertices.shape == (0, 3) and mesh.triangles.shape == (0, 3)

    def test_oracle_sphere_within_one_spacing(self, grid16, sphere_scene):
        mesh = marching_tets(grid16, oracle_params(grid16, sphere_scene))
        dist = np.abs(np.linalg.norm(mesh.vertices, axis=1) - SPHERE_R)
        assert dist.max() <= grid16.spacing
        assert is_watertight(mesh)

    def test_fitted_sphere(self, grid16, sphere_scene, fitted_sphere):
        mesh = marching_tets(grid16, fitted_sphere[0])
        assert np.abs(sphere_scene.sdf(mesh.vertices)).max() <= grid16.spacing
        assert is_watertight(mesh)

    def test_faces_point_outwards(self, grid16, sphere_scene):
        mesh = marching_tets(grid16, oracle_params(grid16, sphere_scene))
        centres = mesh.vertices[mesh.triangles].mean(axis=1)
        assert np.all((mesh.face_normals * centres).sum(axis=1) > 0)

    def test_linear_field_is_exact(self):
        g = TetGrid(5)
        rng = np.random.default_rng(0)
        off = project_offsets(g, rng.uniform(-0.1, 0.1, (g.n_vertices, 3)))
        a = np.array([0.4, -0.2, 0.9])
        p = FieldParams((g.vertices + off) @ a - 0.05, off)
        mesh = marching_tets(g, p)
        npt.assert_allclose(mesh.vertices @ a, 0.05, atol=1e-12)
        npt.assert_allclose(mesh.face_normals, np.tile(a / np.linalg.norm(a), (len(mesh), 1)), atol=1e-9)

    def test_sign_flip_reverses_orientation(self, sphere_scene):
        g = TetGrid(6)
        p = oracle_params(g, sphere_scene)
        a = marching_tets(g, p)
        b = marching_tets(g, FieldParams(-p.sdf, p.offset))
        npt.assert_array_equal(a.edges, b.edges)
        npt.assert_allclose(a.vertices, b.vertices, atol=1e-15)
        canon = lambda t: tuple(np.roll(t, -np.argmin(t)).tolist())  # noqa: E731
        assert {canon(t) for t in a.triangles} == {canon(t[::-1]) for t in b.triangles}

    def test_shared_edge_vertices_deduplicated(self, grid16, sphere_scene):
        mesh = marching_tets(grid16, oracle_params(grid16, sphere_scene))
        assert len(np.unique(mesh.edge_ids)) == len(mesh.vertices)
        npt.assert_array_equal(grid16.edges[mesh.edge_ids], mesh.edges)

    def test_deterministic(self, sphere_scene):
        g = TetGrid(8)
        a = marching_tets(g, oracle_params(g, sphere_scene))
        b = marching_tets(g, oracle_params(g, sphere_scene))
        npt.assert_array_equal(a.vertices, b.vertices)
        npt.assert_array_equal(a.triangles, b.triangles)


class TestBackward:
    def _setup(self, sphere_scene):
        g = TetGrid(6)
        rng = np.random.default_rng(3)
        p = oracle_params(g, sphere_scene)
        p.offset[:] = project_offsets(g, rng.uniform(-0.05, 0.05, (g.n_vertices, 3)))
        mesh = marching_tets(g, p)
        w = rng.standard_normal(mesh.vertices.shape)
        return g, p, mesh, w

    def test_matches_finite_differences(self, sphere_scene):
        g, p, mesh, w = self._setup(sphere_scene)
        grad = mt_backward(g, p, mesh, w)

        def f():
            m = marching_tets(g, p)
            assert np.array_equal(m.edges, mesh.edges)  # topology must not change
            return float((m.vertices * w).sum())

        used = np.unique(mesh.edges)
        fd = central_fd(f, p.sdf, used, 1e-6)
        npt.assert_allclose(fd, grad.sdf[used], rtol=1e-5, atol=1e-7)
        idx = (used[:, None] * 3 + np.arange(3)).ravel()
        fd = central_fd(f, p.offset, idx, 1e-6)
        npt.assert_allclose(fd, grad.offset.ravel()[idx], rtol=1e-5, atol=1e-7)

    def test_untouched_vertices_get_zero(self, sphere_scene):
        g, p, mesh, w = self._setup(sphere_scene)
        grad = mt_backward(g, p, mesh, w)
        far = np.setdiff1d(np.arange(g.n_vertices), mesh.edges)
        assert np.all(grad.sdf[far] == 0) and np.all(grad.offset[far] == 0)

    def test_rejects_mesh_without_provenance(self):
        g = TetGrid(2)
        mesh = SurfaceMesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
        with pytest.raises(ProvenanceError):
            mt_backward(g, FieldParams.zeros(g), mesh, np.zeros((3, 3)))

    def test_rejects_foreign_parameters(self, sphere_scene):
        g, p, mesh, w = self._setup(sphere_scene)
        with pytest.raises(ProvenanceError, match="not extracted"):
            mt_backward(g, FieldParams(p.sdf + 10.0, p.offset), mesh, w)

    def test_rejects_wrong_gradient_shape(self, sphere_scene):
        g, p, mesh, _ = self._setup(sphere_scene)
        with pytest.raises(ProvenanceError):
            mt_backward(g, p, mesh, np.zeros((len(mesh.vertices) + 1, 3)))


class TestNormals:
    def test_unit_and_right_handed(self):
        n = face_normals(REF_TET, np.array([[0, 1, 2]]))
        c = np.cross(REF_TET[1] - REF_TET[0], REF_TET[2] - REF_TET[0])
        npt.assert_allclose(n[0], c / np.linalg.norm(c), atol=1e-15)

    def test_degenerate_face(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float)
        npt.assert_array_equal(face_normals(v, np.array([[0, 1, 2]])), [[0, 0, 1]])

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal((5, 3))
        tris = np.array([[0, 1, 2], [1, 3, 2], [2, 3, 4]])
        w = rng.standard_normal((3, 3))
        grad = face_normals_backward(v, tris, w)
        fd = central_fd(lambda: float((face_normals(v, tris) * w).sum()), v, range(15), 1e-6)
        npt.assert_allclose(fd, grad.ravel(), rtol=1e-6, atol=1e-9)


class TestCensus:
    TET = SurfaceMesh(REF_TET.copy(), np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]))

    def test_closed_tet_is_watertight(self):
        assert edge_census(self.TET) == {"edges": 6, "boundary": 0, "nonmanifold": 0, "inconsistent": 0}
        assert is_watertight(self.TET)

    def test_missing_face_leaves_boundary(self):
        open_tet = SurfaceMesh(self.TET.vertices, self.TET.triangles[:3])
        assert edge_census(open_tet)["boundary"] == 3
        assert not is_watertight(open_tet)

    def test_flipped_face_is_inconsistent(self):
        tris = self.TET.triangles.copy()
        tris[0] = tris[0, ::-1]
        assert edge_census(SurfaceMesh(self.TET.vertices, tris))["inconsistent"] == 3

    def test_empty_mesh_not_watertight(self):
        assert not is_watertight(SurfaceMesh(np.zeros((0, 3)), np.zeros((0, 3), int)))
