"""K-means region segmentation of point normals with a growing cluster count.

For K = 1, 2, ... the normals are clustered from K random unit seeds; the
inner assign/update loop runs while the number of regions whose worst
member angle is below ``gamma`` keeps growing. The outer loop stops at the
first K for which every region is under ``gamma``.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud


class DegenerateRegionError(ValueError):
    pass


class SegmentationError(RuntimeError):
    def __init__(self, message: str, best: "SegmentationResult | None" = None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SegmentationConfig:
    gamma: float = np.radians(20.0)
    max_K: int = 400
    max_inner_iters: int = 100
    seed: int = 0
    initial_K: int = 1

    def __post_init__(self):
        if not 0 < self.gamma < np.pi / 2:
            raise ValueError("gamma must lie in (0, pi/2)")
        if self.max_K < 1:
            raise ValueError("max_K must be >= 1")


@dataclass
class Region:
    point_indices: np.ndarray
    avg_normal: np.ndarray
    max_angle: float


@dataclass
class SegmentationResult:
    regions: list[Region]
    final_K: int
    sigma_history: list[int]
    labels: np.ndarray = field(repr=False)  # -1 for points without a valid normal
    at_fixpoint: bool = False

    @property
    def max_angle(self) -> float:
        return max(r.max_angle for r in self.regions)


def average_normal(normals) -> np.ndarray:
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(normals) == 0:
        raise DegenerateRegionError("average of an empty normal set")
    mean = normals.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise DegenerateRegionError("normals cancel out; region has no average direction")
    return mean / norm


def angle_between(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.arccos(np.clip(np.sum(a * b, axis=-1), -1.0, 1.0))


def _assign(normals: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ang = np.arccos(np.clip(normals @ centers.T, -1.0, 1.0))
    labels = np.argmin(ang, axis=1)  # first index wins ties
    return labels, ang[np.arange(len(normals)), labels]


def _fill_empty(normals, centers, labels, own_angle):
    """Re-seed empty clusters with the member farthest from its region normal."""
    K = len(centers)
    counts = np.bincount(labels, minlength=K)
    for j in np.flatnonzero(counts == 0):
        worst = int(np.argmax(own_angle))
        counts[labels[worst]] -= 1
        labels[worst] = j
        own_angle[worst] = 0.0
        centers[j] = normals[worst]
        counts[j] = 1


def _update(normals, labels, centers):
    K = len(centers)
    sums = np.zeros((K, 3))
    np.add.at(sums, labels, normals)
    norms = np.linalg.norm(sums, axis=1)
    new = centers.copy()
    ok = norms > 1e-12
    new[ok] = sums[ok] / norms[ok, None]
    return new


def _region_max_angles(normals, labels, centers):
    own = angle_between(normals, centers[labels])
    worst = np.zeros(len(centers))
    np.maximum.at(worst, labels, own)
    return worst


def _lloyd_polish(normals, labels, centers, gamma, max_iters):
    """Continue assign/update to a fixpoint as long as every region stays under gamma."""
    for _ in range(max_iters):
        new_labels, _ = _assign(normals, centers)
        if np.array_equal(new_labels, labels):
            return labels, centers, True
        if np.bincount(new_labels, minlength=len(centers)).min() == 0:
            return labels, centers, False
        new_centers = _update(normals, new_labels, centers)
        if _region_max_angles(normals, new_labels, new_centers).max() >= gamma:
            return labels, centers, False
        labels, centers = new_labels, new_centers
    return labels, centers, False


def _build(normals, valid_idx, labels, centers, K, history, n_total, fixpoint) -> SegmentationResult:
    worst = _region_max_angles(normals, labels, centers)
    regions = []
    full = np.full(n_total, -1, dtype=np.int64)
    for j in range(K):
        members = valid_idx[labels == j]
        if len(members) == 0:
            continue
        full[members] = len(regions)
        regions.append(Region(members, centers[j].copy(), float(worst[j])))
    return SegmentationResult(regions, K, list(history), full, fixpoint)


def kmeans_segment(cloud: PointCloud, cfg: SegmentationConfig = SegmentationConfig()) -> SegmentationResult:
    if cloud.normals is None:
        raise ValueError("segmentation needs normals")
    valid_idx = np.flatnonzero(cloud.valid_normal_mask())
    if len(valid_idx) == 0:
        raise ValueError("no valid normals to segment")
    normals = cloud.normals[valid_idx]
    rng = np.random.default_rng(cfg.seed)
    best = None
    for K in range(cfg.initial_K, cfg.max_K + 1):
        centers = rng.normal(size=(K, 3))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        sigma_prev, history = -1, []
        labels = None
        for _ in range(cfg.max_inner_iters):
            labels, own = _assign(normals, centers)
            _fill_empty(normals, centers, labels, own)
            centers = _update(normals, labels, centers)
            worst = _region_max_angles(normals, labels, centers)
            sigma = int(np.count_nonzero(worst < cfg.gamma))
            history.append(sigma)
            if not sigma > sigma_prev:
                break
            sigma_prev = sigma
        worst = _region_max_angles(normals, labels, centers)
        if worst.max() < cfg.gamma:
            labels, centers, fixpoint = _lloyd_polish(normals, labels, centers, cfg.gamma, cfg.max_inner_iters)
            return _build(normals, valid_idx, labels, centers, K, history, len(cloud), fixpoint)
        if best is None or worst.max() < best[0]:
            best = (worst.max(), labels.copy(), centers.copy(), K, list(history))
    _, labels, centers, K, history = best
    raise SegmentationError(
        f"no partition with all regions under {np.degrees(cfg.gamma):.2f} deg up to K={cfg.max_K}",
        _build(normals, valid_idx, labels, centers, K, history, len(cloud), False))


def region_colors(n_regions: int, seed: int = 7) -> np.ndarray:
    """Distinct-ish RGB colour per region for PLY export."""
    rng = np.random.default_rng(seed)
    hues = (np.arange(n_regions) * 0.61803398875 + rng.random()) % 1.0
    rgb = [colorsys.hsv_to_rgb(h, 0.75, 0.95) for h in hues]
    return (np.array(rgb).reshape(-1, 3) * 255).round().astype(np.uint8)
