"""File formats: OBJ meshes, 8-bit PNG images, JSON / JSON-lines logs.

Every writer goes through :func:`atomic_write`, so a reader never sees a
half-written file.
"""
from __future__ import annotations

import hashlib
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .tessellate import SurfaceMesh, face_normals


class MeshFormatError(ValueError):
    pass


def atomic_write(path: str | os.PathLike, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- OBJ ---------------------------------------------------------------------

def obj_text(mesh: SurfaceMesh) -> str:
    # 17 significant digits so that re-imported vertices are bit-identical
    lines = ["# sherpa-lift surface mesh"]
    lines += ["v %.17g %.17g %.17g" % tuple(v) for v in mesh.vertices]
    lines += ["vn %.17g %.17g %.17g" % tuple(n) for n in face_normals(mesh.vertices, mesh.triangles)]
    lines += ["f %d//%d %d//%d %d//%d" % (a + 1, k + 1, b + 1, k + 1, c + 1, k + 1)
              for k, (a, b, c) in enumerate(mesh.triangles)]
    return "\n".join(lines) + "\n"


def write_obj(path, mesh: SurfaceMesh) -> Path:
    return atomic_write(path, obj_text(mesh).encode())


def parse_obj(text: str) -> SurfaceMesh:
    verts, tris = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) < 3:
                    raise MeshFormatError(f"line {lineno}: face needs at least 3 vertices")
                # fan-triangulate polygons
                tris += [[idx[0] - 1, idx[k] - 1, idx[k + 1] - 1] for k in range(1, len(idx) - 1)]
        except ValueError as exc:
            if isinstance(exc, MeshFormatError):
                raise
            raise MeshFormatError(f"line {lineno}: {exc}") from None
    v = np.array(verts, float).reshape(-1, 3)
    f = np.array(tris, np.int64).reshape(-1, 3)
    if len(f) and (f.min() < 0 or f.max() >= len(v)):
        raise MeshFormatError("face refers to a missing vertex")
    return SurfaceMesh(v, f)


def read_obj(path) -> SurfaceMesh:
    return parse_obj(Path(path).read_text())


# -- PNG ---------------------------------------------------------------------

def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, float), 0.0, 1.0) * 255.0).astype(np.uint8)


def _png_bytes(img: Image.Image) -> bytes:
    buf = _io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, image: np.ndarray) -> Path:
    """8-bit RGB, row-major, no gamma chunk."""
    return atomic_write(path, _png_bytes(Image.fromarray(to_uint8(image), "RGB")))


def write_mask_png(path, mask: np.ndarray) -> Path:
    return atomic_write(path, _png_bytes(Image.fromarray(np.asarray(mask, bool)).convert("1")))


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img)


# -- JSON --------------------------------------------------------------------

def write_json(path, obj) -> Path:
    return atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def write_jsonl(path, rows) -> Path:
    return atomic_write(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows).encode())


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
