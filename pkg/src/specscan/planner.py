"""Adaptive ROI scan planning.

Each segmented region is rotated so its average normal is +z, shifted to
mean height zero and spun so its narrowest planar direction lies on x. The
canonical region is cut into equal-width slabs along x and every slab into
strips along y no wider than the field of view; the slab count grows until
every patch is flat enough (normal spread, depth of view) for one pass of
the line-scan camera. Each patch yields a start/stop pose pair.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud, RigidTransform, apply_transform, rotation_between
from .scan_control import depth_of_view, field_of_view
from .segmentation import DegenerateRegionError, SegmentationResult, angle_between, average_normal

SCAN_PATH_SCHEMA = "specscan.scan_path/1"
BOUND_TOL = 1e-9


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class CameraSpec:
    field_of_view: float = 20.0
    depth_of_view: float = 2.0
    working_distance: float = 50.0
    beta: float = np.radians(10.0)
    n_pixels: int = 200
    pixel_size: float | None = None
    angle_of_view: float | None = None
    sensor_diagonal: float | None = None
    f_number: float | None = None
    focal_length: float | None = None

    def __post_init__(self):
        if self.pixel_size is None:
            object.__setattr__(self, "pixel_size", self.field_of_view / self.n_pixels)
        for name in ("field_of_view", "depth_of_view", "working_distance", "beta", "n_pixels", "pixel_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"camera {name} must be positive")

    @classmethod
    def from_optics(cls, working_distance, angle_of_view, f_number, sensor_diagonal, focal_length,
                    n_pixels, beta=np.radians(10.0)) -> "CameraSpec":
        vf = field_of_view(working_distance, angle_of_view)
        vd = depth_of_view(working_distance, f_number, sensor_diagonal, focal_length)
        return cls(vf, vd, working_distance, beta, n_pixels, vf / n_pixels, angle_of_view,
                   sensor_diagonal, f_number, focal_length)


@dataclass(frozen=True)
class RegionFrame:
    forward: RigidTransform  # object frame -> canonical frame (R_p * T_g * R_z)
    T_inv: RigidTransform
    R_inv: RigidTransform
    shortest_boundary_dir: np.ndarray  # object frame


@dataclass
class Patch:
    point_indices: np.ndarray
    points: np.ndarray  # canonical frame
    avg_normal: np.ndarray
    epsilon: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    V_L: float
    slab: int = 0
    region_id: int = 0
    patch_id: int = 0


@dataclass(frozen=True)
class PathPoint:
    position: np.ndarray
    view_dir: np.ndarray
    motion_dir: np.ndarray
    region_id: int
    patch_id: int


@dataclass
class RegionPlan:
    region_id: int
    frame: RegionFrame
    patches: list[Patch]
    k: int
    omega_y: list[int]
    pairs: list[tuple[PathPoint, PathPoint]] = field(default_factory=list)

    @property
    def omega(self) -> int:
        return sum(self.omega_y)


@dataclass
class ScanPath:
    pairs: list[tuple[PathPoint, PathPoint]]
    region_order: list[int]
    omega: dict[int, int] = field(default_factory=dict)
    omega_y: dict[int, list[int]] = field(default_factory=dict)
    k: dict[int, int] = field(default_factory=dict)

    @property
    def points(self) -> list[PathPoint]:
        return [p for pair in self.pairs for p in pair]


@dataclass
class CompletenessReport:
    passed: bool
    violations: np.ndarray
    n_points: int


# -- 2D hull and minimal width ------------------------------------------------

def convex_hull_2d(pts) -> np.ndarray:
    """Andrew's monotone chain; counter-clockwise hull vertices, no repeats."""
    pts = np.unique(np.asarray(pts, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _canonical_sign(d: np.ndarray) -> np.ndarray:
    if d[0] < -1e-15 or (abs(d[0]) <= 1e-15 and d[1] < 0):
        return -d
    return d


def min_width_direction(pts2d) -> tuple[np.ndarray, float]:
    """Rotating calipers over the convex hull: unit direction of minimal width
    and that width."""
    hull = convex_hull_2d(pts2d)
    if len(hull) == 1:
        return np.array([1.0, 0.0]), 0.0
    if len(hull) == 2:
        e = hull[1] - hull[0]
        d = np.array([-e[1], e[0]]) / np.linalg.norm(e)
        return _canonical_sign(d), 0.0
    h = len(hull)

    def dist(i, j):
        a, b = hull[i], hull[(i + 1) % h]
        e = b - a
        return ((e[0]) * (hull[j][1] - a[1]) - (e[1]) * (hull[j][0] - a[0])) / math.hypot(*e)

    best_w, best_i = np.inf, 0
    j = 1
    for i in range(h):
        while dist(i, (j + 1) % h) > dist(i, j):
            j = (j + 1) % h
        w = dist(i, j)
        if w < best_w - 1e-12:
            best_w, best_i = w, i
    e = hull[(best_i + 1) % h] - hull[best_i]
    d = np.array([-e[1], e[0]]) / np.linalg.norm(e)
    return _canonical_sign(d), float(best_w)


# -- region canonicalisation ---------------------------------------------------

def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def canonical_region_transform(region_cloud: PointCloud, avg_normal) -> tuple[PointCloud, RegionFrame]:
    if len(region_cloud) == 0:
        raise PlanningError("empty region")
    R_z = RigidTransform(rotation_between(avg_normal, [0.0, 0.0, 1.0]))
    rotated = R_z.apply_points(region_cloud.points)
    T_g = RigidTransform.from_translation([0.0, 0.0, -rotated[:, 2].mean()])
    lifted = T_g.apply_points(rotated)
    b2, _ = min_width_direction(lifted[:, :2])
    R_p = RigidTransform(_rot_z(-math.atan2(b2[1], b2[0])))
    forward = R_p @ T_g @ R_z
    T_inv = forward.inverse()
    b_world = R_z.inverse().apply_dirs(np.array([b2[0], b2[1], 0.0]))
    frame = RegionFrame(forward, T_inv, T_inv.rotation_only(), b_world)
    return apply_transform(region_cloud, forward), frame


# -- subdivision -------------------------------------------------------------

def _make_patch(pts, normals, idx, slab, cam: CameraSpec) -> Patch | None:
    """Build a patch if it passes the flatness and camera-cube checks."""
    try:
        r = average_normal(normals)
    except DegenerateRegionError:
        return None
    if angle_between(normals, r).max() >= cam.beta:
        return None
    eps = pts.mean(axis=0)
    if np.abs(pts[:, 1] - eps[1]).max() > cam.field_of_view / 2:
        return None
    if np.abs(pts[:, 2] - eps[2]).max() > cam.depth_of_view / 2:
        return None
    x0, x1 = float(pts[:, 0].min()), float(pts[:, 0].max())
    y0, y1 = float(pts[:, 1].min()), float(pts[:, 1].max())
    return Patch(idx, pts, r, eps, np.array([x0, eps[1], eps[2]]), np.array([x1, eps[1], eps[2]]),
                 (x0, x1), (y0, y1), x1 - x0, slab)


def _bins(values: np.ndarray, lo: float, width: float, count: int) -> np.ndarray:
    if count == 1 or width <= 0:
        return np.zeros(len(values), dtype=np.int64)
    return np.clip(np.floor((values - lo) / width).astype(np.int64), 0, count - 1)


def _split_slab(pts, normals, idx, slab, cam, max_extra):
    """Equal-width strips in y; the first count that yields valid patches wins."""
    y = pts[:, 1]
    y0, ext = float(y.min()), float(y.max() - y.min())
    base = max(1, math.ceil(ext / cam.field_of_view))
    limit = base if ext == 0 else max(base, min(len(pts), base * max_extra))
    for count in range(base, limit + 1):
        sid = _bins(y, y0, ext / count, count)
        patches = []
        for s in range(count):
            m = sid == s
            if not m.any():
                continue
            p = _make_patch(pts[m], normals[m], idx[m], slab, cam)
            if p is None:
                break
            patches.append(p)
        else:
            return patches
    return None


def _try_slabs(pts, normals, idx, cam, k, max_extra):
    x = pts[:, 0]
    x0, xext = float(x.min()), float(x.max() - x.min())
    sid = _bins(x, x0, xext / k, k)
    patches, omega_y = [], []
    for s in range(k):
        m = sid == s
        if not m.any():
            omega_y.append(0)
            continue
        got = _split_slab(pts[m], normals[m], idx[m], s, cam, max_extra)
        if got is None:
            return None
        patches.extend(got)
        omega_y.append(len(got))
    return patches, omega_y


def subdivide_region(canonical: PointCloud, cam: CameraSpec, indices=None,
                     max_strip_factor: int = 16) -> tuple[list[Patch], int, list[int]]:
    """Split a canonical region into camera-sized patches.

    Returns the patches, the slab count k and the per-slab patch counts. The
    strip count of a slab starts at ceil(y_extent / V_F) and may grow up to
    ``max_strip_factor`` times that before another slab is added. A sparse,
    scattered region that still fails once k reaches its point count is
    scanned one point per patch, in x order.
    """
    if canonical.normals is None:
        raise PlanningError("subdivision needs normals")
    pts, normals = canonical.points, canonical.normals
    idx = np.arange(len(pts)) if indices is None else np.asarray(indices)
    xext = float(np.ptp(pts[:, 0])) if len(pts) else 0.0
    max_k = 1 if xext == 0 else len(pts)
    for k in range(1, max_k + 1):
        got = _try_slabs(pts, normals, idx, cam, k, max_strip_factor)
        if got is not None:
            return got[0], k, got[1]
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    patches = [_make_patch(pts[i:i + 1], normals[i:i + 1], idx[i:i + 1], s, cam) for s, i in enumerate(order)]
    if any(p is None for p in patches):
        raise PlanningError("region has points without usable normals")
    return patches, len(patches), [1] * len(patches)


def patch_path_points(patch: Patch, frame: RegionFrame | None, cam: CameraSpec) -> tuple[PathPoint, PathPoint]:
    z = np.array([0.0, 0.0, 1.0])
    chi1 = patch.psi1 + cam.working_distance * z
    chi2 = patch.psi2 + cam.working_distance * z
    eta = -z
    tau = np.array([1.0, 0.0, 0.0])
    if frame is not None:
        chi1, chi2 = frame.T_inv.apply_points(np.stack([chi1, chi2]))
        eta = frame.R_inv.apply_dirs(eta)
        tau = frame.R_inv.apply_dirs(tau)
    return (PathPoint(chi1, eta, tau, patch.region_id, patch.patch_id),
            PathPoint(chi2, eta.copy(), tau.copy(), patch.region_id, patch.patch_id))


def cube_coordinates(points, pair: tuple[PathPoint, PathPoint], cam: CameraSpec) -> np.ndarray:
    """Per-point (lambda, lateral, depth) offsets relative to the first pose's
    surface anchor, in the frame spanned by the pose pair."""
    start, stop = pair
    anchor = start.position + cam.working_distance * start.view_dir
    lateral = np.cross(start.view_dir, start.motion_dir)
    d = np.asarray(points, dtype=float) - anchor
    return np.stack([d @ start.motion_dir, d @ lateral, d @ (-start.view_dir)], axis=1)


def inside_cube(points, pair, cam: CameraSpec, tol: float = BOUND_TOL) -> np.ndarray:
    start, stop = pair
    V_L = float(np.linalg.norm(stop.position - start.position))
    c = cube_coordinates(points, pair, cam)
    return ((c[:, 0] >= -tol) & (c[:, 0] <= V_L + tol)
            & (np.abs(c[:, 1]) <= cam.field_of_view / 2 + tol)
            & (np.abs(c[:, 2]) <= cam.depth_of_view / 2 + tol))


def validate_completeness(patch: Patch, path_pair, cam: CameraSpec, frame: RegionFrame | None = None,
                          tol: float = BOUND_TOL) -> CompletenessReport:
    """Check every patch point lies inside the swept camera cube of its pose pair.

    ``path_pair`` is in the canonical frame unless ``frame`` is given, in which
    case it is in the object frame and the patch points are mapped there.
    """
    pts = patch.points if frame is None else frame.T_inv.apply_points(patch.points)
    ok = inside_cube(pts, path_pair, cam, tol)
    bad = np.flatnonzero(~ok)
    return CompletenessReport(len(bad) == 0, bad, len(pts))


# -- whole-object planning ----------------------------------------------------

def plan_region(cloud: PointCloud, indices, avg_normal, cam: CameraSpec, region_id: int) -> RegionPlan:
    region = cloud.subset(indices)
    canonical, frame = canonical_region_transform(region, avg_normal)
    patches, k, omega_y = subdivide_region(canonical, cam, indices=np.asarray(indices))
    plan = RegionPlan(region_id, frame, patches, k, omega_y)
    for pid, patch in enumerate(patches):
        patch.region_id, patch.patch_id = region_id, pid
        plan.pairs.append(patch_path_points(patch, frame, cam))
    return plan


def order_regions(per_region_paths) -> ScanPath:
    """Greedy nearest-neighbour tour over regions, starting from the first entry.

    ``per_region_paths`` is a sequence of ``(region_id, pairs)``; distance is
    from the last pose of the current region to the first pose of a candidate.
    """
    entries = list(per_region_paths)
    if not entries:
        raise PlanningError("no regions to order")
    visited = [0]
    remaining = list(range(1, len(entries)))
    while remaining:
        last = entries[visited[-1]][1][-1][-1].position
        dists = [np.linalg.norm(entries[i][1][0][0].position - last) for i in remaining]
        nxt = remaining[int(np.argmin(dists))]
        visited.append(nxt)
        remaining.remove(nxt)
    pairs = [pair for i in visited for pair in entries[i][1]]
    return ScanPath(pairs, [entries[i][0] for i in visited])


def plan_path(cloud: PointCloud, seg: SegmentationResult, cam: CameraSpec) -> tuple[ScanPath, list[RegionPlan]]:
    plans = [plan_region(cloud, r.point_indices, r.avg_normal, cam, rid) for rid, r in enumerate(seg.regions)]
    path = order_regions([(p.region_id, p.pairs) for p in plans])
    for p in plans:
        path.omega[p.region_id] = p.omega
        path.omega_y[p.region_id] = list(p.omega_y)
        path.k[p.region_id] = p.k
    return path, plans


# -- JSON ---------------------------------------------------------------------

def _vec(v) -> list[float]:
    return [float(x) for x in v]


def _pose_json(p: PathPoint) -> dict:
    return {"pos": _vec(p.position), "view": _vec(p.view_dir), "motion": _vec(p.motion_dir)}


def scan_path_to_json(path: ScanPath) -> dict:
    return {
        "schema": SCAN_PATH_SCHEMA,
        "units": "mm",
        "region_order": [int(r) for r in path.region_order],
        "regions": [{"region_id": int(r), "k": int(path.k.get(r, 0)), "omega": int(path.omega.get(r, 0)),
                     "omega_y": [int(x) for x in path.omega_y.get(r, [])]} for r in path.region_order],
        "patches": [{"region_id": int(a.region_id), "patch_id": int(a.patch_id),
                     "start": _pose_json(a), "stop": _pose_json(b)} for a, b in path.pairs],
    }


def scan_path_from_json(doc: dict) -> ScanPath:
    if doc.get("schema") != SCAN_PATH_SCHEMA:
        raise ValueError(f"unexpected scan path schema {doc.get('schema')!r}")

    def pose(d, rid, pid):
        return PathPoint(np.array(d["pos"], float), np.array(d["view"], float),
                         np.array(d["motion"], float), rid, pid)

    pairs = [(pose(p["start"], p["region_id"], p["patch_id"]), pose(p["stop"], p["region_id"], p["patch_id"]))
             for p in doc["patches"]]
    path = ScanPath(pairs, list(doc["region_order"]))
    for r in doc.get("regions", []):
        path.omega[r["region_id"]] = r["omega"]
        path.omega_y[r["region_id"]] = list(r["omega_y"])
        path.k[r["region_id"]] = r["k"]
    return path


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"
