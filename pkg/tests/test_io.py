import json

import numpy as np
import numpy.testing as npt
import pytest
from PIL import Image

from sherpa_lift import io as sio
from sherpa_lift.report import image_grid, metrics_figure
from sherpa_lift.tessellate import SurfaceMesh, marching_tets

from helpers import oracle_params, uv_sphere


class TestObj:
    def test_round_trip_is_exact(self, grid16, sphere_scene, tmp_path):
        mesh = marching_tets(grid16, oracle_params(grid16, sphere_scene))
        back = sio.read_obj(sio.write_obj(tmp_path / "m.obj", mesh))
        npt.assert_array_equal(back.triangles, mesh.triangles)
        npt.assert_array_equal(back.vertices, mesh.vertices)

    def test_random_vertices_survive(self):
        v = np.random.default_rng(0).standard_normal((50, 3)) * 1e-3
        mesh = SurfaceMesh(v, np.array([[0, 1, 2], [3, 4, 5]]))
        npt.assert_array_equal(sio.parse_obj(sio.obj_text(mesh)).vertices, v)

    def test_face_normal_records(self):
        text = sio.obj_text(uv_sphere(1.0, 4, 8))
        n_faces = sum(line.startswith("f ") for line in text.splitlines())
        assert sum(line.startswith("vn ") for line in text.splitlines()) == n_faces
        assert "f 1//1 " in text

    def test_polygons_are_fan_triangulated(self):
        mesh = sio.parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        npt.assert_array_equal(mesh.triangles, [[0, 1, 2], [0, 2, 3]])

    def test_empty_mesh(self, tmp_path):
        empty = SurfaceMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64))
        back = sio.read_obj(sio.write_obj(tmp_path / "e.obj", empty))
        assert back.vertices.shape == (0, 3) and back.triangles.shape == (0, 3)

    @pytest.mark.parametrize("text, fragment", [
        ("v 0 0 0\nf 1 2 3\n", "missing vertex"),
        ("v 0 0 zero\n", "line 1"),
        ("v 0 0 0\nv 1 0 0\nf 1 2\n", "at least 3"),
    ])
    def test_malformed(self, text, fragment):
        with pytest.raises(sio.MeshFormatError, match=fragment):
            sio.parse_obj(text)


class TestPng:
    def test_rgb_round_trip(self, tmp_path):
        img = np.random.default_rng(0).uniform(0, 1, (9, 7, 3))
        back = sio.read_png(sio.write_png(tmp_path / "a.png", img))
        assert back.dtype == np.uint8 and back.shape == (9, 7, 3)
        npt.assert_array_equal(back, sio.to_uint8(img))
        assert np.abs(back / 255.0 - img).max() <= 0.5 / 255 + 1e-12

    def test_mask_is_one_bit(self, tmp_path):
        mask = np.random.default_rng(1).uniform(size=(6, 10)) > 0.5
        path = sio.write_mask_png(tmp_path / "m.png", mask)
        with Image.open(path) as im:
            assert im.mode == "1"
        npt.assert_array_equal(sio.read_png(path).astype(bool), mask)

    def test_clipping(self):
        npt.assert_array_equal(sio.to_uint8(np.array([-0.5, 0.0, 0.5, 1.0, 2.0])), [0, 0, 128, 255, 255])


class TestFiles:
    def test_atomic_write_replaces_and_cleans_up(self, tmp_path):
        p = tmp_path / "sub" / "x.txt"
        sio.atomic_write(p, b"one")
        sio.atomic_write(p, b"two")
        assert p.read_bytes() == b"two"
        assert sorted(f.name for f in p.parent.iterdir()) == ["x.txt"]

    def test_atomic_write_failure_leaves_no_temp(self, tmp_path):
        with pytest.raises(TypeError):
            sio.atomic_write(tmp_path / "y.txt", "not bytes")
        assert list(tmp_path.iterdir()) == []

    def test_json_is_sorted_and_stable(self, tmp_path):
        p = sio.write_json(tmp_path / "a.json", {"b": 1, "a": [1, 2]})
        assert p.read_text() == json.dumps({"a": [1, 2], "b": 1}, indent=2) + "\n"

    def test_jsonl_round_trip(self, tmp_path):
        rows = [{"iteration": 0, "x": 1.5}, {"iteration": 1, "x": -2.0}]
        assert sio.read_jsonl(sio.write_jsonl(tmp_path / "m.jsonl", rows)) == rows

    def test_sha256(self, tmp_path):
        p = tmp_path / "h"
        p.write_bytes(b"abc")
        assert sio.sha256(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


class TestFigures:
    ROWS = [{"iteration": i, "sds_residual_norm": 1.0 / (i + 1), "l_struc": 0.1, "l_sem": 0.0, "t": 980 - i}
            for i in range(10)]

    def test_metrics_figure_is_a_png(self, tmp_path):
        p = metrics_figure(self.ROWS, tmp_path / "m.png")
        assert sio.read_png(p).ndim == 3

    def test_metrics_figure_is_deterministic(self, tmp_path):
        a = metrics_figure(self.ROWS, tmp_path / "a.png").read_bytes()
        b = metrics_figure(self.ROWS, tmp_path / "b.png").read_bytes()
        assert a == b

    def test_empty_metrics(self, tmp_path):
        assert metrics_figure([], tmp_path / "e.png").exists()

    def test_image_grid(self, tmp_path):
        imgs = [np.full((8, 8, 3), v) for v in (0.0, 0.5, 1.0)]
        assert sio.read_png(image_grid(imgs, ["a", "b", "c"], tmp_path / "g.png")).ndim == 3
