"""Bias-corrected Adam over named parameter blocks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimState:
    lr: float = 1e-3
    lr_final: float = 5e-4
    total_steps: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self) -> float:
        """Linear decay from ``lr`` to ``lr_final`` over ``total_steps`` updates."""
        if self.total_steps <= 1:
            return self.lr
        frac = min(self.step, self.total_steps - 1) / (self.total_steps - 1)
        return self.lr + (self.lr_final - self.lr) * frac


def adam_step(params: dict, grads: dict, state: OptimState) -> dict:
    """Return updated copies of ``params``; ``state`` is advanced in place.

    Raises FloatingPointError naming the first block with a non-finite gradient.
    """
    for name in params:
        g = np.asarray(grads[name])
        if g.shape != np.shape(params[name]):
            raise ValueError(f"gradient shape {g.shape} does not match parameter block {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
    lr = state.current_lr()
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=float)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out
