import json

import numpy as np
import numpy.testing as npt
import pytest

from sherpa_lift import io as sio
from sherpa_lift import pipeline
from sherpa_lift.config import load_config
from sherpa_lift.optimize import StageError
from sherpa_lift.render import rasterize_normals
from sherpa_lift.scene import SceneError

from helpers import write_config


def quiet(_msg):
    pass


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("pipeline")
    cfg = load_config(write_config(base))
    return cfg, pipeline.run_pipeline(cfg, base / "a", say=quiet)


class TestOutputs:
    def test_status_ok(self, tiny_run):
        _, res = tiny_run
        assert res.status == 0
        assert res.manifest["status"] == "ok"

    def test_directory_contents(self, tiny_run):
        _, res = tiny_run
        names = {p.name for p in res.out.iterdir()}
        assert {"coarse.obj", "final.obj", "fit_report.json", "metrics.jsonl", "metrics.png",
                "manifest.json", "renders.png", "albedo.npy", "appearance_metrics.jsonl"} <= names
        assert len([n for n in names if n.startswith("normal_az")]) >= 4
        assert len([n for n in names if n.startswith("mask_az")]) >= 4
        assert len([n for n in names if n.startswith("color_az")]) >= 4

    def test_metrics_log_schema(self, tiny_run):
        cfg, res = tiny_run
        rows = sio.read_jsonl(res.out / "metrics.jsonl")
        assert len(rows) == cfg["geometry.iterations"]
        assert set(rows[0]) == {"iteration", "sds_residual_norm", "l_struc", "l_sem", "gamma_struc",
                                "gamma_sem", "t", "wall_ms"}

    def test_manifest_contents(self, tiny_run):
        cfg, res = tiny_run
        man = json.loads((res.out / "manifest.json").read_text())
        assert man["config"] == cfg.to_dict(include_out=False)
        assert man["seeds"]["run"] == 0
        assert set(man["stages"]) == {"fit", "geometry", "appearance"}
        for name, digest in man["artifacts"].items():
            assert sio.sha256(res.out / name) == digest
        assert "coarse.obj" in man["artifacts"] and "final.obj" in man["artifacts"]

    def test_albedo_matches_final_mesh(self, tiny_run):
        _, res = tiny_run
        albedo = np.load(res.out / "albedo.npy")
        mesh = sio.read_obj(res.out / "final.obj")
        assert albedo.shape == (len(mesh.vertices), 3)
        assert albedo.min() >= 0 and albedo.max() <= 1

    def test_preview_images(self, tiny_run):
        cfg, res = tiny_run
        img = sio.read_png(res.out / "normal_az000.png")
        assert img.shape == (cfg["camera.res"], cfg["camera.res"], 3)
        mask = sio.read_png(res.out / "mask_az000.png").astype(bool)
        assert mask.any() and np.all(img[~mask] == 0)


class TestDeterminism:
    def test_same_config_same_outputs(self, tiny_run, tmp_path):
        cfg, first = tiny_run
        second = pipeline.run_pipeline(cfg, tmp_path / "b", say=quiet)
        assert second.manifest == first.manifest
        for name in ("coarse.obj", "final.obj", "albedo.npy", "normal_az090.png"):
            assert (first.out / name).read_bytes() == (second.out / name).read_bytes()

    def test_different_seed_differs(self, tiny_run, tmp_path):
        cfg, first = tiny_run
        other = pipeline.run_pipeline(cfg.with_overrides(run__seed=1), tmp_path / "c", say=quiet)
        assert other.manifest["seeds"]["run"] == 1
        assert (first.out / "final.obj").read_bytes() != (other.out / "final.obj").read_bytes()


class TestGatingAndFailure:
    def test_appearance_off(self, tmp_path):
        cfg = load_config(write_config(tmp_path, appearance__iterations=0))
        res = pipeline.run_pipeline(cfg, tmp_path / "run", say=quiet)
        names = {p.name for p in res.out.iterdir()}
        assert res.status == 0
        assert "final.obj" in names and "coarse.obj" in names
        assert not any(n.startswith("color_") or n.startswith("albedo") or n.startswith("appearance")
                       for n in names)
        assert "appearance" not in res.manifest["stages"]

    def test_stage_failure_recorded(self, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise StageError("geometry stage: non-finite loss at iteration 7")

        monkeypatch.setattr(pipeline, "run_geometry_stage", boom)
        cfg = load_config(write_config(tmp_path))
        res = pipeline.run_pipeline(cfg, tmp_path / "run", say=quiet)
        man = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert res.status == 2
        assert man["status"] == "failed" and man["failed_stage"] == "geometry"
        assert "iteration 7" in man["error"]
        assert (tmp_path / "run" / "coarse.obj").exists()
        assert not (tmp_path / "run" / "final.obj").exists()

    def test_scene_outside_box_rejected_before_running(self, tmp_path):
        (tmp_path / "big.scene").write_text("b - sphere radius=1.2\n")
        cfg = load_config(write_config(tmp_path, scene__path=tmp_path / "big.scene"))
        with pytest.raises(SceneError):
            pipeline.run_pipeline(cfg, tmp_path / "run", say=quiet)

    def test_progress_messages(self, tmp_path):
        msgs = []
        cfg = load_config(write_config(tmp_path, appearance__iterations=0, geometry__iterations=1))
        pipeline.run_pipeline(cfg, tmp_path / "run", say=msgs.append)
        assert [m.split(":")[0] for m in msgs] == ["fit", "geometry", "appearance"]


def test_target_mesh_is_the_oracle_extraction(grid16, ellipsoid_scene):
    mesh = pipeline.target_mesh(grid16, ellipsoid_scene)
    assert np.abs(ellipsoid_scene.sdf(mesh.vertices)).max() <= grid16.spacing


def test_normal_condition_carries_the_render(grid16, sphere_scene):
    mesh = pipeline.target_mesh(grid16, sphere_scene)
    cam = pipeline.preview_cameras(16)[1]
    tok = pipeline.normal_condition(mesh)(cam)
    npt.assert_array_equal(tok.target, rasterize_normals(mesh, cam).pixels)
    assert tok.name == "normal:az90_el15"
