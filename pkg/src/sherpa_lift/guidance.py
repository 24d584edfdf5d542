"""Structural and semantic guidance between prior and live normal maps.

All linear image operators (Gaussian blur with reflect padding, central
differences with replicated borders) are built as small dense matrices per
axis, so their adjoints are plain transposes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass
class GuidanceConfig:
    lambda_struc: float = 10.0
    lambda_sem: float = 30.0
    beta: float = 0.5
    m: float = 1000.0
    sigma: float = 1.0
    radius: int = 3
    encoder: str = "patch-stats"

    def __post_init__(self):
        for name in ("lambda_struc", "lambda_sem", "beta", "m", "sigma", "radius"):
            if getattr(self, name) < 0:
                raise ValueError(f"guidance.{name} must be >= 0")
        if self.radius < math.ceil(3 * self.sigma):
            raise ValueError(f"guidance.radius must be >= ceil(3 * sigma) = {math.ceil(3 * self.sigma)}")


def anneal(lam: float, n_cur: float, beta: float, m: float) -> float:
    """Step annealing: full weight up to iteration ``m``, exponential decay after."""
    if lam < 0 or beta < 0:
        raise ValueError("lambda and beta must be >= 0")
    return lam * math.exp(-beta * max(0.0, n_cur - m))


# ---------------------------------------------------------------------------
# linear operators
# ---------------------------------------------------------------------------

def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-x * x / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_kernel2d(sigma: float, radius: int) -> np.ndarray:
    k = gaussian_kernel1d(sigma, radius)
    return np.outer(k, k)


def _reflect(i: int, n: int) -> int:
    # half-sample symmetric: d c b a | a b c d | d c b a
    period = 2 * n
    i %= period
    return i if i < n else period - 1 - i


@lru_cache(maxsize=64)
def blur_matrix(n: int, sigma: float, radius: int) -> np.ndarray:
    k = gaussian_kernel1d(sigma, radius)
    m = np.zeros((n, n))
    for i in range(n):
        for j, w in enumerate(k):
            m[i, _reflect(i + j - radius, n)] += w
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def diff_matrix(n: int) -> np.ndarray:
    m = np.zeros((n, n))
    for i in range(n):
        m[i, min(i + 1, n - 1)] += 0.5
        m[i, max(i - 1, 0)] -= 0.5
    m.setflags(write=False)
    return m


def _apply(a_rows: np.ndarray, img: np.ndarray, a_cols: np.ndarray) -> np.ndarray:
    # out[:, :, c] = a_rows @ img[:, :, c] @ a_cols.T
    tmp = np.tensordot(a_rows, img, axes=(1, 0))
    return np.tensordot(tmp, a_cols, axes=(1, 1)).transpose(0, 2, 1)


def gaussian_filter(image: np.ndarray, sigma: float = 1.0, radius: int | None = None) -> np.ndarray:
    """Separable normalised Gaussian blur, reflect padding, per channel."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    radius = math.ceil(3 * sigma) if radius is None else radius
    img = np.asarray(image, float)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    h, w = img.shape[:2]
    out = _apply(blur_matrix(h, sigma, radius), img, blur_matrix(w, sigma, radius))
    return out[..., 0] if squeeze else out


def valid_mask(mask: np.ndarray) -> np.ndarray:
    """True where the whole 3x3 neighbourhood is covered (image border counts as covered)."""
    m = np.pad(np.asarray(mask, bool), 1, mode="edge")
    h, w = mask.shape
    out = np.ones((h, w), bool)
    for dy in range(3):
        for dx in range(3):
            out &= m[dy:dy + h, dx:dx + w]
    return out


@dataclass
class Descriptor:
    values: np.ndarray  # (H, W, C)
    gx: np.ndarray
    gy: np.ndarray
    valid: np.ndarray


def _descriptor(pixels: np.ndarray, mask: np.ndarray | None, cfg: GuidanceConfig) -> Descriptor:
    img = np.asarray(pixels, float)
    # derivatives ignore constants; removing one first makes constant images give exact zeros
    img = img - img[:1, :1]
    h, w = img.shape[:2]
    bh, bw = blur_matrix(h, cfg.sigma, cfg.radius), blur_matrix(w, cfg.sigma, cfg.radius)
    gx = _apply(bh, img, diff_matrix(w) @ bw)
    gy = _apply(diff_matrix(h) @ bh, img, bw)
    valid = np.ones((h, w), bool) if mask is None else valid_mask(mask)
    desc = np.sqrt(gx * gx + gy * gy) * valid[..., None]
    return Descriptor(desc, gx, gy, valid)


def structural_descriptor(normal_map, config: GuidanceConfig | None = None) -> np.ndarray:
    """Gradient magnitude of the blurred encoded normal map, zeroed near background."""
    cfg = config or GuidanceConfig()
    pixels, mask = _pixels_mask(normal_map)
    return _descriptor(pixels, mask, cfg).values


def _descriptor_backward(d: Descriptor, grad: np.ndarray, cfg: GuidanceConfig) -> np.ndarray:
    h, w = grad.shape[:2]
    bh, bw = blur_matrix(h, cfg.sigma, cfg.radius), blur_matrix(w, cfg.sigma, cfg.radius)
    u = grad * d.valid[..., None]
    mag = np.sqrt(d.gx ** 2 + d.gy ** 2)
    safe = np.where(mag > 0, mag, 1.0)
    ggx = np.where(mag > 0, u * d.gx / safe, 0.0)
    ggy = np.where(mag > 0, u * d.gy / safe, 0.0)
    return _apply(bh.T, ggx, (diff_matrix(w) @ bw).T) + _apply((diff_matrix(h) @ bh).T, ggy, bw.T)


def _pixels_mask(m):
    if hasattr(m, "pixels"):
        return m.pixels, m.mask
    return np.asarray(m, float), None


def structural_loss(prior_maps, live_maps, config: GuidanceConfig | None = None):
    """Sum over views of squared descriptor differences; gradient w.r.t. live pixels."""
    cfg = config or GuidanceConfig()
    if len(prior_maps) != len(live_maps):
        raise ValueError("prior and live map counts differ")
    loss = 0.0
    grads = []
    for pm, lm in zip(prior_maps, live_maps):
        pp, pmask = _pixels_mask(pm)
        lp, lmask = _pixels_mask(lm)
        if pp.shape != lp.shape:
            raise ValueError(f"map shapes differ: {pp.shape} vs {lp.shape}")
        dp = _descriptor(pp, pmask, cfg)
        dl = _descriptor(lp, lmask, cfg)
        diff = dl.values - dp.values
        loss += float((diff * diff).sum())
        grads.append(_descriptor_backward(dl, 2.0 * diff, cfg))
    return loss, grads


# ---------------------------------------------------------------------------
# semantic encoders
# ---------------------------------------------------------------------------

@dataclass
class FeatureVec:
    values: np.ndarray
    degenerate: bool = False
    raw_norm: float = 1.0


def _normalize(raw: np.ndarray) -> FeatureVec:
    n = float(np.linalg.norm(raw))
    if n < 1e-12:
        canon = np.full(raw.shape, 1.0 / math.sqrt(raw.size))
        return FeatureVec(canon, True, n)
    return FeatureVec(raw / n, False, n)


def _normalize_backward(raw: np.ndarray, feat: FeatureVec, grad: np.ndarray) -> np.ndarray:
    if feat.degenerate:
        return np.zeros_like(raw)
    f = feat.values
    return (grad - f * (f @ grad)) / feat.raw_norm


class PatchStatsEncoder:
    """Per-channel mean over a ``cells x cells`` grid of patches, L2-normalised."""

    def __init__(self, cells: int = 4):
        self.cells = cells

    def _bounds(self, n):
        return np.round(np.linspace(0, n, self.cells + 1)).astype(int)

    def raw(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, float)
        rb, cb = self._bounds(img.shape[0]), self._bounds(img.shape[1])
        out = np.empty((self.cells, self.cells, img.shape[2]))
        for i in range(self.cells):
            for j in range(self.cells):
                out[i, j] = img[rb[i]:rb[i + 1], cb[j]:cb[j + 1]].mean(axis=(0, 1))
        return out.ravel()

    def encode(self, image: np.ndarray) -> FeatureVec:
        return _normalize(self.raw(image))

    def vjp(self, image: np.ndarray, grad_feat: np.ndarray) -> np.ndarray:
        img = np.asarray(image, float)
        raw = self.raw(img)
        g = _normalize_backward(raw, _normalize(raw), grad_feat).reshape(self.cells, self.cells, -1)
        rb, cb = self._bounds(img.shape[0]), self._bounds(img.shape[1])
        out = np.zeros_like(img)
        for i in range(self.cells):
            for j in range(self.cells):
                cnt = (rb[i + 1] - rb[i]) * (cb[j + 1] - cb[j])
                out[rb[i]:rb[i + 1], cb[j]:cb[j + 1]] = g[i, j] / cnt
        return out


class RandomProjectionEncoder:
    """Fixed-seed Gaussian projection of the flattened image, L2-normalised."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._mats: dict = {}

    def _matrix(self, size: int) -> np.ndarray:
        if size not in self._mats:
            rng = np.random.default_rng([self.seed, size])
            self._mats[size] = rng.standard_normal((self.dim, size)) / math.sqrt(size)
        return self._mats[size]

    def raw(self, image):
        flat = np.asarray(image, float).ravel()
        return self._matrix(flat.size) @ flat

    def encode(self, image) -> FeatureVec:
        return _normalize(self.raw(image))

    def vjp(self, image, grad_feat):
        img = np.asarray(image, float)
        raw = self.raw(img)
        g = _normalize_backward(raw, _normalize(raw), grad_feat)
        return (self._matrix(img.size).T @ g).reshape(img.shape)


ENCODERS = {"patch-stats": PatchStatsEncoder, "random-projection": RandomProjectionEncoder}


def make_encoder(name: str):
    try:
        return ENCODERS[name]()
    except KeyError:
        raise ValueError(f"unknown encoder {name!r}; choose from {sorted(ENCODERS)}") from None


def semantic_encode(encoder, image) -> FeatureVec:
    pixels, _ = _pixels_mask(image)
    return encoder.encode(pixels)


def semantic_loss(prior_feats, live_feats):
    """``sum(1 - cos)`` over views; gradient w.r.t. the live feature vectors."""
    if len(prior_feats) != len(live_feats):
        raise ValueError("prior and live feature counts differ")
    loss = 0.0
    grads = []
    for a, b in zip(prior_feats, live_feats):
        a = np.asarray(getattr(a, "values", a), float)
        b = np.asarray(getattr(b, "values", b), float)
        if a.shape != b.shape:
            raise ValueError(f"feature shapes differ: {a.shape} vs {b.shape}")
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        cos = float(a @ b / (na * nb))
        loss += 1.0 - cos
        grads.append(-(a / (na * nb) - cos * b / (nb * nb)))
    return loss, grads


def semantic_guidance(encoder, prior_maps, live_maps):
    """Semantic loss on encoded maps with the gradient chained to live pixels."""
    pf = [semantic_encode(encoder, m) for m in prior_maps]
    lp = [_pixels_mask(m)[0] for m in live_maps]
    lf = [encoder.encode(p) for p in lp]
    loss, gfeat = semantic_loss(pf, lf)
    return loss, [encoder.vjp(p, g) for p, g in zip(lp, gfeat)]
