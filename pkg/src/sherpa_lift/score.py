"""Diffusion-side machinery: schedules, forward noising, CFG and SDS gradients.

Score providers are analytic stand-ins for a pretrained image diffusion
model.  All of them predict noise (epsilon parameterisation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np


@dataclass
class DiffusionSchedule:
    alpha: np.ndarray  # alpha[t - 1] for t = 1..T
    sigma: np.ndarray

    @property
    def T(self) -> int:
        return len(self.alpha)

    def at(self, t: int) -> tuple[float, float]:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return float(self.alpha[t - 1]), float(self.sigma[t - 1])


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    """Variance-preserving schedule from a linear beta ramp."""
    if not (0 < beta_start <= beta_end < 1) or T < 1:
        raise ValueError("need T >= 1 and 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T)
    abar = np.cumprod(1.0 - betas)
    return DiffusionSchedule(np.sqrt(abar), np.sqrt(1.0 - abar))


def perturb(x: np.ndarray, t: int, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    x = np.asarray(x, float)
    eps = np.asarray(eps, float)
    if x.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} does not match image shape {x.shape}")
    a, s = schedule.at(t)
    return a * x + s * eps


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, s: float) -> np.ndarray:
    eps_cond = np.asarray(eps_cond, float)
    eps_uncond = np.asarray(eps_uncond, float)
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError("conditional and unconditional predictions differ in shape")
    if s < 0:
        raise ValueError("guidance scale must be >= 0")
    # (1+s)*c - s*u written so that c == u returns c bit-exactly
    return eps_cond + s * (eps_cond - eps_uncond)


@dataclass(frozen=True, eq=False)
class ConditionToken:
    """Conditioning signal; analytic providers may carry a per-view target image."""

    name: str
    target: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __eq__(self, other):
        return isinstance(other, ConditionToken) and self.name == other.name

    def __hash__(self):
        return hash(self.name)


EMPTY = ConditionToken("")


class ScoreProvider(Protocol):
    def predict_noise(self, z_t: np.ndarray, t: int, y: ConditionToken) -> np.ndarray: ...


class PointMassProvider:
    """Optimal denoiser for a point mass at the target (conditional branch) and
    for a standard-normal data prior (unconditional branch)."""

    def __init__(self, schedule: DiffusionSchedule, x_star: np.ndarray | None = None):
        self.schedule = schedule
        self.x_star = None if x_star is None else np.asarray(x_star, float)

    def predict_noise(self, z_t, t, y):
        z_t = np.asarray(z_t, float)
        a, s = self.schedule.at(t)
        if y == EMPTY:
            return z_t * s / (a * a + s * s)
        target = y.target if y.target is not None else self.x_star
        if target is None:
            raise ValueError(f"no target image for condition {y.name!r}")
        if target.shape != z_t.shape:
            raise ValueError(f"target shape {target.shape} does not match input {z_t.shape}")
        return (z_t - a * target) / s


def analytic_target_provider(x_star: np.ndarray, schedule: DiffusionSchedule) -> PointMassProvider:
    return PointMassProvider(schedule, x_star)


@dataclass(frozen=True)
class WeightSchedule:
    """``constant`` (value), ``sigma-squared``, or ``truncated-ramp`` rising
    linearly from 0 at ``t_lo`` to ``value`` at ``t_hi``."""

    kind: str = "sigma-squared"
    value: float = 1.0
    t_lo: int = 20
    t_hi: int = 980

    def __call__(self, t: int, schedule: DiffusionSchedule) -> float:
        if self.kind == "constant":
            w = self.value
        elif self.kind == "sigma-squared":
            w = schedule.at(t)[1] ** 2
        elif self.kind == "truncated-ramp":
            w = self.value * min(max((t - self.t_lo) / max(self.t_hi - self.t_lo, 1), 0.0), 1.0)
        else:
            raise ValueError(f"unknown weight schedule {self.kind!r}")
        if w < 0:
            raise ValueError("weight must be >= 0")
        return float(w)


TIMESTEP_STRATEGIES = ("uniform-random", "linear-descending")


def sample_timestep(strategy: str, iteration: int, total: int, T: int, seed: int = 0) -> int:
    if not 0 <= iteration < total:
        raise ValueError("iteration must lie in [0, total)")
    hi, lo = round(0.98 * T), round(0.02 * T)
    if strategy == "linear-descending":
        frac = iteration / (total - 1) if total > 1 else 0.0
        return int(round(hi + (lo - hi) * frac))
    if strategy == "uniform-random":
        return int(np.random.default_rng([seed, iteration]).integers(lo, hi + 1))
    raise ValueError(f"unknown timestep strategy {strategy!r}; choose from {TIMESTEP_STRATEGIES}")


def sds_image_gradient(provider: ScoreProvider, x: np.ndarray, y: ConditionToken, t: int,
                       eps: np.ndarray, s: float, w: WeightSchedule,
                       schedule: DiffusionSchedule) -> tuple[np.ndarray, float]:
    """``w(t) * (eps_hat - eps)`` w.r.t. the rendered image, plus the residual norm.

    The latent encoder is the identity, so the gradient lives in pixel space.
    """
    z = perturb(x, t, eps, schedule)
    e_c = provider.predict_noise(z, t, y)
    e_u = provider.predict_noise(z, t, EMPTY)
    if e_c.shape != z.shape or e_u.shape != z.shape:
        raise ValueError("provider output shape does not match its input")
    resid = cfg_combine(e_c, e_u, s) - eps
    return w(t, schedule) * resid, float(math.sqrt((resid * resid).sum()))
