from pathlib import Path

import pytest

from sherpa_lift.config import SCHEMA, ConfigError, RunConfig, load_config, parse_config

from helpers import CONFIGS, write_config


class TestParse:
    def test_defaults_fill_missing_keys(self):
        cfg = parse_config("scene.path = a.scene\n", "/base")
        assert cfg["grid.resolution"] == 16
        assert cfg["score.cfg_scale"] == 50.0
        assert cfg["camera.radius"] == 2.5 and cfg["camera.fov"] == 45.0
        assert cfg["geometry.lr"] == 1e-3 and cfg["geometry.lr_final"] == 5e-4
        assert cfg["guidance.lambda_struc"] == 10.0 and cfg["guidance.lambda_sem"] == 30.0
        assert cfg["guidance.beta"] == 0.5

    def test_paths_resolved_against_config_dir(self):
        cfg = parse_config("scene.path = a.scene\nrun.out = /abs/out\n", "/base/dir")
        assert cfg["scene.path"] == str(Path("/base/dir/a.scene"))
        assert cfg["run.out"] == "/abs/out"

    def test_typed_values_and_comments(self):
        cfg = parse_config("# header\ncamera.b = 3   # inline\nappearance.init = 0.1, 0.2,0.3\n"
                           "fit.grid_vertices = off\n")
        assert cfg["camera.b"] == 3
        assert cfg["appearance.init"] == (0.1, 0.2, 0.3)
        assert cfg["fit.grid_vertices"] is False

    @pytest.mark.parametrize("text, fragment", [
        ("camera.bb = 2", "line 1: unknown config key 'camera.bb'"),
        ("camera.b = 2\ncamera.b = 3", "line 2: duplicate config key 'camera.b'"),
        ("camera.b = two", "bad value for 'camera.b'"),
        ("appearance.init = 0.1,0.2", "bad value for 'appearance.init'"),
        ("fit.grid_vertices = maybe", "bad value"),
        ("just words", "expected 'key = value'"),
    ])
    def test_errors_name_line_and_key(self, text, fragment):
        with pytest.raises(ConfigError, match=fragment):
            parse_config(text)

    def test_every_schema_key_parses_its_default(self):
        for key, (parser, default) in SCHEMA.items():
            if default is None or isinstance(default, tuple):
                continue
            assert parser(str(default)) == default, key


class TestValidate:
    def test_desk_config_loads(self):
        cfg = load_config(CONFIGS / "desk.cfg")
        assert Path(cfg["scene.path"]).name == "sphere.scene"
        assert Path(cfg["scene.target"]).name == "ellipsoid.scene"
        assert cfg.stage("geometry").iterations == 300
        assert cfg.cameras().res == 64

    def test_missing_scene_path(self, tmp_path):
        (tmp_path / "c.cfg").write_text("grid.resolution = 4\n")
        with pytest.raises(ConfigError, match="scene.path is required"):
            load_config(tmp_path / "c.cfg")

    def test_missing_scene_file(self, tmp_path):
        (tmp_path / "c.cfg").write_text("scene.path = nowhere.scene\n")
        with pytest.raises(ConfigError, match="file not found"):
            load_config(tmp_path / "c.cfg")

    def test_unreadable_config(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(tmp_path / "absent.cfg")

    @pytest.mark.parametrize("override, fragment", [
        ({"geometry__iterations": -1}, "geometry.iterations must be >= 0"),
        ({"grid__resolution": 0}, "grid.resolution must be >= 1"),
        ({"guidance__encoder": "clip"}, "unknown encoder"),
        ({"score__timestep": "cosine"}, "unknown strategy"),
        ({"score__weight": "snr"}, "unknown weight"),
        ({"appearance__target": "1.2,0,0"}, r"\[0, 1\]"),
        ({"guidance__radius": 1}, "guidance"),
        ({"camera__b": 0}, "camera"),
        ({"camera__fov": 190}, "camera"),
    ])
    def test_invalid_values(self, tmp_path, override, fragment):
        with pytest.raises(ConfigError, match=fragment):
            load_config(write_config(tmp_path, **override))


class TestRunConfig:
    def test_overrides_return_a_copy(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        other = cfg.with_overrides(run__seed=7)
        assert other["run.seed"] == 7 and cfg["run.seed"] == 0

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            RunConfig().with_overrides(run__sed=1)

    def test_typed_views(self, tmp_path):
        cfg = load_config(write_config(tmp_path, run__seed=4))
        fc = cfg.fit_config()
        assert fc.iterations == 40 and fc.seed == 4
        assert cfg.guidance().encoder == "patch-stats"
        assert cfg.weight().kind == "sigma-squared"
        assert cfg.cameras().b == 1

    def test_to_dict_can_drop_output_dir(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert "run.out" in cfg.to_dict()
        d = cfg.to_dict(include_out=False)
        assert "run.out" not in d
        assert d["appearance.init"] == [0.5, 0.5, 0.5]
