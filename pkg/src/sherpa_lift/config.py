"""Flat ``section.key = value`` run configuration.

Every key has a type and a default; unknown keys, duplicates and values that
do not parse are hard errors naming the offending key.  Paths are resolved
relative to the config file.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .field import FitConfig
from .guidance import ENCODERS, GuidanceConfig
from .optimize import CameraConfig, StageConfig
from .score import TIMESTEP_STRATEGIES, WeightSchedule


class ConfigError(ValueError):
    pass


def _vec3(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ValueError("expected three comma-separated numbers")
    return tuple(parts)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "run.seed": (int, 0),
    "run.out": (str, "runs/desk"),
    "scene.path": (str, None),
    "scene.target": (str, ""),
    "grid.resolution": (int, 16),
    "fit.iterations": (int, 500),
    "fit.lr": (float, 1e-2),
    "fit.lr_final": (float, 5e-3),
    "fit.lambda_def": (float, 0.1),
    "fit.n_surface": (int, 2000),
    "fit.n_near": (int, 2000),
    "fit.n_uniform": (int, 8000),
    "fit.band": (float, 0.1),
    "fit.n_held_out": (int, 1000),
    "fit.grid_vertices": (_bool, True),
    "geometry.iterations": (int, 300),
    "geometry.lr": (float, 1e-3),
    "geometry.lr_final": (float, 5e-4),
    "appearance.iterations": (int, 300),
    "appearance.lr": (float, 1e-2),
    "appearance.lr_final": (float, 5e-3),
    "appearance.init": (_vec3, (0.5, 0.5, 0.5)),
    "appearance.target": (_vec3, (0.8, 0.4, 0.2)),
    "guidance.lambda_struc": (float, 10.0),
    "guidance.lambda_sem": (float, 30.0),
    "guidance.beta": (float, 0.5),
    "guidance.m": (float, 1000.0),
    "guidance.sigma": (float, 1.0),
    "guidance.radius": (int, 3),
    "guidance.encoder": (str, "patch-stats"),
    "score.T": (int, 1000),
    "score.beta_start": (float, 1e-4),
    "score.beta_end": (float, 0.02),
    "score.cfg_scale": (float, 50.0),
    "score.weight": (str, "sigma-squared"),
    "score.weight_value": (float, 1.0),
    "score.timestep": (str, "linear-descending"),
    "camera.b": (int, 2),
    "camera.l": (int, 4),
    "camera.elev_min": (float, -30.0),
    "camera.elev_max": (float, 30.0),
    "camera.radius": (float, 2.5),
    "camera.fov": (float, 45.0),
    "camera.res": (int, 64),
}

_COUNTS = ("grid.resolution", "fit.iterations", "fit.n_surface", "fit.n_near", "fit.n_uniform",
           "fit.n_held_out", "geometry.iterations", "appearance.iterations", "score.T",
           "camera.b", "camera.l", "camera.res")
_PATHS = ("scene.path", "scene.target", "run.out")


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})
    base_dir: Path = Path(".")

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, **kv) -> "RunConfig":
        vals = dict(self.values)
        for k, v in kv.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            vals[key] = v
        return RunConfig(vals, self.base_dir)

    # -- typed views ---------------------------------------------------------
    def fit_config(self) -> FitConfig:
        v = self.values
        return FitConfig(iterations=v["fit.iterations"], lr=v["fit.lr"], lr_final=v["fit.lr_final"],
                         lambda_def=v["fit.lambda_def"], n_surface=v["fit.n_surface"],
                         n_near=v["fit.n_near"], n_uniform=v["fit.n_uniform"], band=v["fit.band"],
                         n_held_out=v["fit.n_held_out"], grid_vertices=v["fit.grid_vertices"],
                         seed=v["run.seed"])

    def stage(self, name: str) -> StageConfig:
        v = self.values
        return StageConfig(v[f"{name}.iterations"], v[f"{name}.lr"], v[f"{name}.lr_final"])

    def guidance(self) -> GuidanceConfig:
        v = self.values
        return GuidanceConfig(v["guidance.lambda_struc"], v["guidance.lambda_sem"], v["guidance.beta"],
                              v["guidance.m"], v["guidance.sigma"], v["guidance.radius"],
                              v["guidance.encoder"])

    def cameras(self) -> CameraConfig:
        v = self.values
        return CameraConfig(v["camera.b"], v["camera.l"], v["camera.elev_min"], v["camera.elev_max"],
                            v["camera.radius"], v["camera.fov"], v["camera.res"])

    def weight(self) -> WeightSchedule:
        return WeightSchedule(self.values["score.weight"], self.values["score.weight_value"])

    def to_dict(self, include_out: bool = True) -> dict:
        out = {}
        for k, v in self.values.items():
            if k == "run.out" and not include_out:
                continue
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    def validate(self) -> "RunConfig":
        v = self.values
        for k in _COUNTS:
            if v[k] < 0:
                raise ConfigError(f"{k} must be >= 0")
        for k in ("grid.resolution", "camera.res", "score.T"):
            if v[k] < 1:
                raise ConfigError(f"{k} must be >= 1")
        if v["scene.path"] is None:
            raise ConfigError("scene.path is required")
        for k in ("scene.path", "scene.target"):
            if v[k] and not os.path.isfile(v[k]):
                raise ConfigError(f"{k}: file not found: {v[k]}")
        if v["guidance.encoder"] not in ENCODERS:
            raise ConfigError(f"guidance.encoder: unknown encoder {v['guidance.encoder']!r}")
        if v["score.timestep"] not in TIMESTEP_STRATEGIES:
            raise ConfigError(f"score.timestep: unknown strategy {v['score.timestep']!r}")
        if v["score.weight"] not in ("constant", "sigma-squared", "truncated-ramp"):
            raise ConfigError(f"score.weight: unknown weight schedule {v['score.weight']!r}")
        for k in ("appearance.init", "appearance.target"):
            if not all(0.0 <= c <= 1.0 for c in v[k]):
                raise ConfigError(f"{k}: components must lie in [0, 1]")
        for section, fn in (("guidance", self.guidance), ("camera", self.cameras)):
            try:
                fn()
                if section == "camera":
                    self.cameras().sample(0)
            except ValueError as exc:
                raise ConfigError(f"{section}: {exc}") from None
        return self


def parse_config(text: str, base_dir: str | os.PathLike = ".") -> RunConfig:
    base = Path(base_dir)
    values = {k: d for k, (_, d) in SCHEMA.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        seen.add(key)
        parser = SCHEMA[key][0]
        try:
            parsed = parser(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        if key in _PATHS and parsed and not os.path.isabs(parsed):
            parsed = str(base / parsed)
        values[key] = parsed
    return RunConfig(values, base)


def load_config(path: str | os.PathLike) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(p)!r}: {exc.strerror}") from None
    return parse_config(text, p.parent).validate()
