"""Report figures. Everything renders off-screen to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .segmentation import region_colors  # noqa: E402

STYLE = {
    "font.size": 8,
    "axes.titlesize": 9,
    "axes.labelsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "legend.fontsize": 7,
    "figure.dpi": 100,
    "savefig.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no Software/date chunks so reruns give identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _equal_3d(ax, pts):
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    mid, half = (lo + hi) / 2, (hi - lo).max() / 2
    ax.set_xlim(mid[0] - half, mid[0] + half)
    ax.set_ylim(mid[1] - half, mid[1] + half)
    ax.set_zlim(mid[2] - half, mid[2] + half)


def plot_segmentation(points, labels, path, title="regions"):
    labels = np.asarray(labels)
    colors = np.full((len(points), 3), 0.6)
    ok = labels >= 0
    if ok.any():
        colors[ok] = region_colors(int(labels[ok].max()) + 1)[labels[ok]] / 255.0
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=(5, 4))
        ax = fig.add_subplot(projection="3d")
        ax.scatter(*points.T, c=colors, s=2, depthshade=False)
        _equal_3d(ax, points)
        ax.set_title(f"{title}: {len(np.unique(labels[ok]))}")
        ax.set_xlabel("x [mm]")
        ax.set_ylabel("y [mm]")
        return _save(fig, path)


def plot_scan_path(points, path, out, working_distance):
    """Surface points plus one arrow per patch pass, drawn at the surface anchor."""
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=(5, 4))
        ax = fig.add_subplot(projection="3d")
        ax.scatter(*points.T, s=1, c="0.75", depthshade=False)
        starts = np.array([a.position + working_distance * a.view_dir for a, _ in path.pairs])
        stops = np.array([b.position + working_distance * b.view_dir for _, b in path.pairs])
        for s, e in zip(starts, stops):
            ax.plot(*np.stack([s, e]).T, color="tab:red", lw=0.8)
        tour = np.empty((2 * len(starts), 3))
        tour[0::2], tour[1::2] = starts, stops
        ax.plot(*tour.T, color="tab:blue", lw=0.3, alpha=0.5)
        _equal_3d(ax, points)
        ax.set_title(f"scan path: {len(path.pairs)} patches")
        return _save(fig, out)


def plot_registration(capture_boundary, model_boundary, plane_basis, out, c2c=None):
    u, v, origin = plane_basis

    def uv(p):
        rel = np.asarray(p) - origin
        return rel @ u, rel @ v

    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4))
        ax.scatter(*uv(capture_boundary), s=3, c="tab:blue", label="capture hole rim")
        ax.scatter(*uv(model_boundary), s=1, c="tab:orange", label="aligned model rim")
        ax.set_aspect("equal")
        ax.set_xlabel("u [mm]")
        ax.set_ylabel("v [mm]")
        ax.legend(loc="upper right")
        if c2c is not None:
            ax.set_title(f"c2c {c2c[0]:.3f} +- {c2c[1]:.3f} mm")
        return _save(fig, out)


def plot_detections(images, boxes, out, max_panels=6, truths=None):
    """Patches with detections, boxes in red and truth in green."""
    picked = [i for i, b in enumerate(boxes) if b][:max_panels]
    if not picked:
        picked = list(range(min(1, len(images))))
    with plt.rc_context(STYLE):
        cols = min(3, max(len(picked), 1))
        rows = max(1, -(-len(picked) // cols))
        fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 2.2 * rows), squeeze=False)
        for ax in axes.ravel():
            ax.axis("off")
        for ax, i in zip(axes.ravel(), picked):
            ax.imshow(images[i], cmap="gray", vmin=0, vmax=255, interpolation="nearest", aspect="auto")
            for b in (truths[i] if truths else []):
                ax.add_patch(Rectangle((b.x_min - 0.5, b.y_min - 0.5), b.width, b.height,
                                       fill=False, ec="tab:green", lw=1.2))
            for b in boxes[i]:
                ax.add_patch(Rectangle((b.x_min - 0.5, b.y_min - 0.5), b.width, b.height,
                                       fill=False, ec="red", lw=0.8))
            ax.set_title(f"patch {i}")
        return _save(fig, out)


def plot_defect_map(points, mapped, truth, out):
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=(5, 4))
        ax = fig.add_subplot(projection="3d")
        ax.scatter(*points.T, s=1, c="0.8", depthshade=False)
        if len(truth):
            ax.scatter(*np.asarray(truth).T, s=30, facecolors="none", edgecolors="tab:green", label="injected")
        if len(mapped):
            ax.scatter(*np.asarray(mapped).T, s=8, c="red", marker="x", label="mapped")
        _equal_3d(ax, points)
        ax.legend(loc="upper left")
        ax.set_title("defect map (robot frame)")
        return _save(fig, out)
