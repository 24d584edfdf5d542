"""Matplotlib figures written next to a run's metrics logs."""
from __future__ import annotations

import io as _io
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .io import atomic_write

# keys of a geometry metrics row that are plotted, with axis labels
GEOMETRY_PANELS = (
    ("sds_residual_norm", "SDS residual norm"),
    ("l_struc", "structural loss"),
    ("l_sem", "semantic loss"),
    ("t", "timestep t"),
)


def _save(fig: Figure, path) -> Path:
    FigureCanvasAgg(fig)
    buf = _io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    return atomic_write(path, buf.getvalue())


def metrics_figure(rows: list[dict], path, title: str = "geometry stage") -> Path:
    """One small panel per logged diagnostic, against iteration."""
    panels = [(k, lab) for k, lab in GEOMETRY_PANELS if rows and k in rows[0]]
    fig = Figure(figsize=(3.2 * max(len(panels), 1), 2.8))
    if not panels:
        fig.text(0.5, 0.5, "no iterations", ha="center", va="center")
        return _save(fig, path)
    it = np.array([r["iteration"] for r in rows])
    axes = fig.subplots(1, len(panels), squeeze=False)[0]
    for ax, (key, label) in zip(axes, panels):
        ax.plot(it, [r[key] for r in rows], lw=1.0)
        ax.set_xlabel("iteration")
        ax.set_title(label, fontsize=9)
        if key in ("sds_residual_norm", "l_struc") and min(r[key] for r in rows) > 0:
            ax.set_yscale("log")
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def image_grid(images: list[np.ndarray], labels: list[str], path, ncols: int = 4) -> Path:
    """Tile rendered images (values in [0, 1]) into one figure."""
    n = len(images)
    ncols = max(1, min(ncols, n))
    nrows = max(1, -(-n // ncols))
    fig = Figure(figsize=(2.0 * ncols, 2.1 * nrows))
    axes = fig.subplots(nrows, ncols, squeeze=False).ravel()
    for ax in axes:
        ax.axis("off")
    for ax, img, lab in zip(axes, images, labels):
        ax.imshow(np.clip(img, 0, 1), interpolation="nearest")
        ax.set_title(lab, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
