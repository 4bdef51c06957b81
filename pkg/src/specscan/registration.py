"""Projection registration for objects the depth sensor cannot see.

A specular part shows up in a depth capture of its support plane only as a
hole. The CAD cloud is projected onto the plane, both the projection and the
hole get their boundaries extracted, and ICP aligns the two rims.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud, Plane, RigidTransform, apply_transform, boundary_mask

REGISTRATION_SCHEMA = "specscan.registration/1"


class RegistrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 100
    convergence_tol: float = 1e-4
    max_correspondence_dist: float | None = None  # default: 10% of the bbox diagonal
    densify_passes: int = 2
    densify_neighbours: int = 4

    def __post_init__(self):
        if self.max_iterations < 1 or self.convergence_tol <= 0:
            raise ValueError("ICP iterations and tolerance must be positive")
        if self.densify_passes < 0 or self.densify_neighbours < 1:
            raise ValueError("densify settings must be non-negative")
        if self.max_correspondence_dist is not None and self.max_correspondence_dist <= 0:
            raise ValueError("correspondence distance must be positive")


@dataclass(frozen=True)
class BoundaryConfig:
    model_k: int = 30
    model_gap: float = 0.7 * np.pi
    capture_k: int = 12
    capture_gap: float = np.pi / 2
    border_margin: float = 0.05


@dataclass
class IcpResult:
    transform: RigidTransform
    rms_error: float
    iterations: int
    converged: bool
    rms_history: list[float] = field(default_factory=list)


@dataclass
class RegistrationResult:
    transform: RigidTransform  # object -> robot base
    depth_transform: RigidTransform  # object -> depth camera
    rms_error: float
    iterations: int
    c2c_mean: float
    c2c_std: float
    converged: bool = True
    rms_history: list[float] = field(default_factory=list)
    model_boundary: np.ndarray | None = field(default=None, repr=False)  # aligned, robot frame
    capture_boundary: np.ndarray | None = field(default=None, repr=False)  # robot frame

    def to_json(self) -> dict:
        M = self.transform.matrix
        return {
            "schema": REGISTRATION_SCHEMA,
            "transform": [float(x) for x in M[:3, :4].ravel()],
            "depth_transform": [float(x) for x in self.depth_transform.matrix[:3, :4].ravel()],
            "rms": float(self.rms_error),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "c2c_mean": float(self.c2c_mean),
            "c2c_std": float(self.c2c_std),
        }


def transform_from_row_major(values) -> RigidTransform:
    M = np.asarray(values, dtype=float).reshape(3, 4)
    return RigidTransform(M[:, :3], M[:, 3])


def project_to_plane(cloud: PointCloud, plane: Plane) -> PointCloud:
    t = plane.signed_distance(cloud.points)
    return PointCloud(cloud.points - t[:, None] * plane.normal)


def compose_hand_eye(bTe: RigidTransform, eTm: RigidTransform, mTc: RigidTransform) -> RigidTransform:
    return bTe @ eTm @ mTc


def best_rigid_transform(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rotation and translation taking ``src`` onto ``dst`` (SVD)."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, cd - R @ cs)


def _check_spread(pts: np.ndarray, what: str):
    if len(pts) < 3:
        raise RegistrationError(f"{what} needs at least 3 points")
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if s[1] <= 1e-9 * max(s[0], 1e-300):
        raise RegistrationError(f"{what} is degenerate (collinear)")


def densify(points: np.ndarray, passes: int = 2, k: int = 4) -> np.ndarray:
    """Add midpoints between each point and its ``k`` nearest neighbours
    (pairs further apart than three median spacings are skipped), repeated
    ``passes`` times.

    Two sparse rims matched point to point lock up wherever neighbouring
    samples straddle each other; a denser target lets the source slide to
    the true fit.
    """
    pts = np.asarray(points, dtype=float)
    for _ in range(passes):
        if len(pts) <= k:
            break
        d, idx = cKDTree(pts).query(pts, k + 1)
        limit = 3.0 * float(np.median(d[:, 1]))
        extra = [(pts[d[:, j] < limit] + pts[idx[d[:, j] < limit, j]]) / 2.0 for j in range(1, k + 1)]
        pts = np.unique(np.vstack([pts] + extra), axis=0)
    return pts


def icp_align(source: PointCloud, target: PointCloud, cfg: IcpConfig = IcpConfig(),
              init: RigidTransform | None = None) -> IcpResult:
    """Point-to-point ICP.

    The error tracked per iteration is the RMS of nearest-neighbour distances
    truncated at the correspondence cutoff; pairs beyond the cutoff do not
    drive the update. With this truncation the tracked error cannot increase.
    """
    src, dst = source.points, target.points
    _check_spread(src, "source")
    _check_spread(dst, "target")
    dst = densify(dst, cfg.densify_passes, cfg.densify_neighbours)
    cutoff = cfg.max_correspondence_dist
    if cutoff is None:
        both = np.vstack([src, dst])
        cutoff = 0.1 * float(np.linalg.norm(both.max(0) - both.min(0)))
    tree = cKDTree(dst)
    if init is None:
        init = RigidTransform.from_translation(dst.mean(axis=0) - src.mean(axis=0))
    T = init
    history = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        moved = T.apply_points(src)
        d, idx = tree.query(moved)
        rms = float(np.sqrt(np.mean(np.minimum(d, cutoff) ** 2)))
        history.append(rms)
        if len(history) > 1 and history[-2] - rms < cfg.convergence_tol:
            converged = True
            break
        inl = d <= cutoff
        if inl.sum() < 3:
            raise RegistrationError("fewer than 3 correspondences within the cutoff")
        T = best_rigid_transform(moved[inl], dst[idx[inl]]) @ T
    else:
        d, _ = tree.query(T.apply_points(src))
        history.append(float(np.sqrt(np.mean(np.minimum(d, cutoff) ** 2))))
        it = cfg.max_iterations
    return IcpResult(T, history[-1], it, converged, history)


def cloud_to_cloud_error(a: PointCloud, b: PointCloud) -> tuple[float, float]:
    if len(a) == 0 or len(b) == 0:
        raise ValueError("c2c needs non-empty clouds")
    d, _ = cKDTree(b.points).query(a.points)
    return float(d.mean()), float(d.std())


def hole_rim(capture: PointCloud, plane: Plane, cfg: BoundaryConfig = BoundaryConfig()) -> np.ndarray:
    """Indices of capture boundary points that lie away from the capture's outer frame."""
    mask = boundary_mask(capture, cfg.capture_k, cfg.capture_gap)
    u, v, origin = plane.basis()
    rel = capture.points - origin
    uv = np.stack([rel @ u, rel @ v], axis=1)
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    margin = cfg.border_margin * float((hi - lo).max())
    border = np.minimum(uv - lo, hi - uv).min(axis=1)
    return np.flatnonzero(mask & (border > margin))


def register_object(model_cloud: PointCloud, captured: PointCloud, plane: Plane, bTd: RigidTransform,
                    cfg: IcpConfig = IcpConfig(), design_pose: RigidTransform | None = None,
                    boundary: BoundaryConfig = BoundaryConfig()) -> RegistrationResult:
    """Recover the object pose in the robot frame.

    ``model_cloud`` is the CAD sample placed at its designed pose in the robot
    frame (``design_pose`` maps object to robot for that placement, identity
    by default); ``captured`` is the depth capture in the depth-camera frame
    and ``plane`` the support plane in the robot frame.
    """
    design_pose = design_pose or RigidTransform.identity()
    capture_b = project_to_plane(apply_transform(captured, bTd), plane)
    rim = hole_rim(capture_b, plane, boundary)
    if len(rim) < 3:
        raise RegistrationError("no occlusion hole found in the capture")
    g_bd = capture_b.subset(rim)
    h_proj = project_to_plane(model_cloud, plane)
    h_bd = h_proj.subset(np.flatnonzero(boundary_mask(h_proj, boundary.model_k, boundary.model_gap)))
    icp = icp_align(h_bd, g_bd, cfg)
    delta = icp.transform
    bTo = delta @ design_pose
    dTo = bTd.inverse() @ bTo
    aligned = apply_transform(h_bd, delta)
    mean, std = cloud_to_cloud_error(aligned, g_bd)
    return RegistrationResult(bTo, dTo, icp.rms_error, icp.iterations, mean, std, icp.converged,
                              icp.rms_history, aligned.points, g_bd.points)


def rotation_angle_deg(R) -> float:
    return float(np.degrees(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0))))


def pose_error(estimate: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """(rotation error in degrees, translation error in mm)."""
    E = truth.inverse() @ estimate
    return rotation_angle_deg(E.rotation), float(np.linalg.norm(estimate.translation - truth.translation))

