"""Analytic CSG scenes used as the coarse shape prior.

Every node evaluates a signed distance on an ``(N, 3)`` array of points:
negative inside, positive outside.  Scenes are built in Python or loaded
from a small line-oriented scene file (see :func:`parse_scene`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class SceneError(ValueError):
    pass


def _pts(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p.reshape(-1, 3)


class Node:
    """Base class for scene nodes."""

    def sdf(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def is_exact(self) -> bool:
        return True

    def primitives(self) -> list["Node"]:
        return [self]


@dataclass
class Sphere(Node):
    center: Sequence[float] = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def sdf(self, p):
        return np.linalg.norm(_pts(p) - np.asarray(self.center, float), axis=1) - self.radius

    def bounds(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius


@dataclass
class Box(Node):
    center: Sequence[float] = (0.0, 0.0, 0.0)
    half_extents: Sequence[float] = (0.5, 0.5, 0.5)

    def sdf(self, p):
        q = np.abs(_pts(p) - np.asarray(self.center, float)) - np.asarray(self.half_extents, float)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def bounds(self):
        c = np.asarray(self.center, float)
        h = np.asarray(self.half_extents, float)
        return c - h, c + h


@dataclass
class Torus(Node):
    """Torus around the +y axis; the ring lies in the xz plane."""

    center: Sequence[float] = (0.0, 0.0, 0.0)
    major: float = 0.6
    minor: float = 0.2

    def sdf(self, p):
        q = _pts(p) - np.asarray(self.center, float)
        ring = np.hypot(q[:, 0], q[:, 2]) - self.major
        return np.hypot(ring, q[:, 1]) - self.minor

    def bounds(self):
        c = np.asarray(self.center, float)
        e = np.array([self.major + self.minor, self.minor, self.major + self.minor])
        return c - e, c + e


@dataclass
class Capsule(Node):
    a: Sequence[float] = (0.0, -0.5, 0.0)
    b: Sequence[float] = (0.0, 0.5, 0.0)
    radius: float = 0.2

    def sdf(self, p):
        a = np.asarray(self.a, float)
        ba = np.asarray(self.b, float) - a
        pa = _pts(p) - a
        denom = ba @ ba
        h = np.zeros(len(pa)) if denom == 0 else np.clip(pa @ ba / denom, 0.0, 1.0)
        return np.linalg.norm(pa - h[:, None] * ba, axis=1) - self.radius

    def bounds(self):
        a = np.asarray(self.a, float)
        b = np.asarray(self.b, float)
        return np.minimum(a, b) - self.radius, np.maximum(a, b) + self.radius


@dataclass
class Ellipsoid(Node):
    """Axis-aligned ellipsoid with an exact distance (Lagrange-multiplier bisection)."""

    center: Sequence[float] = (0.0, 0.0, 0.0)
    radii: Sequence[float] = (0.6, 0.42, 0.42)

    def sdf(self, p):
        e = np.asarray(self.radii, float)
        y = np.abs(_pts(p) - np.asarray(self.center, float))
        # keep every component strictly positive so F(lam) is strictly monotone
        y = np.maximum(y, 1e-12)
        inside = ((y / e) ** 2).sum(axis=1) < 1.0
        e2 = e * e
        # bisect on u = lam + min(e2) so the smallest denominator is u itself (no cancellation)
        shift = e2 - e2.min()
        lo = np.where(inside, 0.0, e2.min())
        hi = np.where(inside, e2.min(), e2.min() + e.max() * np.linalg.norm(y, axis=1) + 1e-300)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            f = ((e * y / (shift + mid[:, None])) ** 2).sum(axis=1) - 1.0
            lo = np.where(f > 0, mid, lo)
            hi = np.where(f > 0, hi, mid)
        u = 0.5 * (lo + hi)
        closest = e2 * y / (shift + u[:, None])
        dist = np.linalg.norm(y - closest, axis=1)
        return np.where(inside, -dist, dist)

    def bounds(self):
        c = np.asarray(self.center, float)
        e = np.asarray(self.radii, float)
        return c - e, c + e


@dataclass
class Union(Node):
    children: list = field(default_factory=list)

    def sdf(self, p):
        return np.min([c.sdf(p) for c in self.children], axis=0)

    def bounds(self):
        return _merge_bounds(self.children)

    def is_exact(self):
        return all(c.is_exact() for c in self.children)

    def primitives(self):
        return [q for c in self.children for q in c.primitives()]


@dataclass
class Intersection(Node):
    children: list = field(default_factory=list)

    def sdf(self, p):
        return np.max([c.sdf(p) for c in self.children], axis=0)

    def bounds(self):
        return _merge_bounds(self.children)

    def is_exact(self):
        return False

    def primitives(self):
        return [q for c in self.children for q in c.primitives()]


@dataclass
class SmoothUnion(Node):
    """Polynomial smooth minimum folded left over the children."""

    children: list = field(default_factory=list)
    blend: float = 0.1

    def sdf(self, p):
        d = self.children[0].sdf(p)
        k = self.blend
        for c in self.children[1:]:
            b = c.sdf(p)
            h = np.clip(0.5 + 0.5 * (b - d) / k, 0.0, 1.0)
            d = b * (1.0 - h) + d * h - k * h * (1.0 - h)
        return d

    def bounds(self):
        return _merge_bounds(self.children)

    def is_exact(self):
        return False

    def primitives(self):
        return [q for c in self.children for q in c.primitives()]


def _merge_bounds(children):
    lo, hi = zip(*(c.bounds() for c in children))
    return np.min(lo, axis=0), np.max(hi, axis=0)


@dataclass
class PriorScene:
    root: Node

    def sdf(self, p) -> np.ndarray:
        return self.root.sdf(p)

    @property
    def exact(self) -> bool:
        return self.root.is_exact()

    def validate_in_box(self, limit: float = 1.0) -> None:
        """Raise unless every primitive sits strictly inside ``[-limit, limit]^3``."""
        for prim in self.root.primitives():
            lo, hi = prim.bounds()
            if np.max(np.abs(np.concatenate([lo, hi]))) >= limit:
                raise SceneError(f"{prim!r} reaches the grid bounding box")

    def gradient(self, p: np.ndarray, h: float = 1e-6) -> np.ndarray:
        p = _pts(p)
        g = np.empty_like(p)
        for k in range(3):
            d = np.zeros(3)
            d[k] = h
            g[:, k] = (self.sdf(p + d) - self.sdf(p - d)) / (2 * h)
        return g


def prior_sdf(scene: PriorScene, p) -> np.ndarray | float:
    """Signed distance of ``scene`` at ``p`` (a point or an ``(N, 3)`` array)."""
    arr = np.asarray(p, dtype=float)
    out = scene.sdf(arr)
    return float(out[0]) if arr.ndim == 1 else out


# ---------------------------------------------------------------------------
# scene files
#
#   # comment
#   <id> <parent id | -> <kind> key=value ...
#
# Vector values are comma separated.  Exactly one node has parent "-".
# Children are attached in file order.
# ---------------------------------------------------------------------------

_PRIMITIVE_KEYS = {
    "sphere": (Sphere, {"center": 3, "radius": 1}),
    "box": (Box, {"center": 3, "half_extents": 3}),
    "torus": (Torus, {"center": 3, "major": 1, "minor": 1}),
    "capsule": (Capsule, {"a": 3, "b": 3, "radius": 1}),
    "ellipsoid": (Ellipsoid, {"center": 3, "radii": 3}),
}
_COMBINATORS = {"union": Union, "intersection": Intersection, "smooth_union": SmoothUnion}


def _parse_value(raw: str, n: int, where: str):
    try:
        vals = [float(v) for v in raw.split(",")]
    except ValueError:
        raise SceneError(f"{where}: cannot parse {raw!r} as numbers") from None
    if len(vals) != n:
        raise SceneError(f"{where}: expected {n} value(s), got {len(vals)}")
    return vals[0] if n == 1 else tuple(vals)


def parse_scene(text: str) -> PriorScene:
    nodes: dict[str, Node] = {}
    parents: list[tuple[str, str, int]] = []
    root_id = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) < 3:
            raise SceneError(f"line {lineno}: expected '<id> <parent> <kind> ...'")
        nid, parent, kind = toks[:3]
        where = f"line {lineno}"
        if nid in nodes:
            raise SceneError(f"{where}: duplicate node id {nid!r}")
        if kind not in _PRIMITIVE_KEYS and kind not in _COMBINATORS:
            raise SceneError(f"{where}: unknown node kind {kind!r}")
        kwargs = {}
        for tok in toks[3:]:
            if "=" not in tok:
                raise SceneError(f"{where}: malformed parameter {tok!r}")
            key, raw = tok.split("=", 1)
            if kind in _PRIMITIVE_KEYS:
                allowed = _PRIMITIVE_KEYS[kind][1]
            elif kind == "smooth_union":
                allowed = {"blend": 1}
            else:
                allowed = {}
            if key not in allowed:
                raise SceneError(f"{where}: unknown parameter {key!r} for {kind}")
            kwargs[key] = _parse_value(raw, allowed[key], f"{where} {key}")
        if kind in _PRIMITIVE_KEYS:
            nodes[nid] = _PRIMITIVE_KEYS[kind][0](**kwargs)
        elif kind in _COMBINATORS:
            nodes[nid] = _COMBINATORS[kind](children=[], **kwargs)
        else:
            raise SceneError(f"{where}: unknown node kind {kind!r}")
        if parent == "-":
            if root_id is not None:
                raise SceneError(f"{where}: second root node {nid!r}")
            root_id = nid
        else:
            parents.append((nid, parent, lineno))
    if root_id is None:
        raise SceneError("scene has no root node (parent '-')")
    for nid, parent, lineno in parents:
        target = nodes.get(parent)
        if target is None:
            raise SceneError(f"line {lineno}: unknown parent {parent!r}")
        if not hasattr(target, "children"):
            raise SceneError(f"line {lineno}: parent {parent!r} is a primitive")
        target.children.append(nodes[nid])
    for nid, node in nodes.items():
        if hasattr(node, "children") and not node.children:
            raise SceneError(f"combinator {nid!r} has no children")
    seen, stack = set(), [nodes[root_id]]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.extend(getattr(node, "children", []))
    if len(seen) != len(nodes):
        raise SceneError("scene contains nodes unreachable from the root (parent cycle)")
    return PriorScene(nodes[root_id])


def load_scene(path) -> PriorScene:
    return parse_scene(Path(path).read_text())
