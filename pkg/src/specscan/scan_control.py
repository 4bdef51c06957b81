"""Optics bookkeeping, robot-frame pose conversion and pixel-to-3D mapping.

Tool frame convention: x is the motion direction, z the optical axis and
y = z cross x. Scan images are stored ``(n_pixels, n_lines)``: the column
index counts acquired lines along the motion, the row index is the pixel
along the scan line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, rotation_matrix

ROBOT_PATH_SCHEMA = "specscan.robot_path/1"


class PoseError(ValueError):
    pass


def field_of_view(working_distance: float, angle_of_view: float) -> float:
    if not 0 < angle_of_view < math.pi:
        raise ValueError("angle of view must lie in (0, pi)")
    if working_distance <= 0:
        raise ValueError("working distance must be positive")
    return 2.0 * working_distance * math.tan(angle_of_view / 2.0)


def circle_of_confusion(sensor_diagonal: float) -> float:
    return sensor_diagonal / 1500.0


def depth_of_view(working_distance: float, f_number: float, sensor_diagonal: float, focal_length: float) -> float:
    c = circle_of_confusion(sensor_diagonal)
    return 2.0 * working_distance ** 2 * f_number * c / focal_length ** 2


def line_rate(n_pixels: int, field_of_view: float, speed: float) -> float:
    """Lines per second giving unit magnification: V_F / n = v / rate."""
    return n_pixels * speed / field_of_view


@dataclass(frozen=True)
class RobotPose:
    position: np.ndarray
    rotvec: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.rotvec])

    @property
    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.rotvec)

    @property
    def transform(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.position)

    @classmethod
    def from_vector(cls, v) -> "RobotPose":
        v = np.asarray(v, dtype=float)
        return cls(v[:3].copy(), v[3:].copy())


@dataclass(frozen=True)
class DefectLocation:
    pixel: tuple[float, float]
    local: np.ndarray
    world: np.ndarray
    object: np.ndarray
    patch_id: int = -1
    region_id: int = -1


def rotation_to_axis_angle(R) -> np.ndarray:
    """Rotation vector with angle in [0, pi]; at exactly pi the axis sign is
    chosen so its largest-magnitude component is positive."""
    R = np.asarray(R, dtype=float)
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = math.acos(cos_t)
    skew = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-7:
        return 0.5 * skew
    if math.pi - theta > 1e-6:
        return theta * skew / (2.0 * math.sin(theta))
    # near a half turn: axis from the symmetric part
    B = ((R + R.T) / 2.0 - cos_t * np.eye(3)) / (1.0 - cos_t)
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / math.sqrt(max(B[i, i], 1e-300))
    axis /= np.linalg.norm(axis)
    if np.dot(axis, skew) < 0:
        axis = -axis
    if math.pi - theta < 1e-9 or np.linalg.norm(skew) < 1e-12:
        j = int(np.argmax(np.abs(axis)))
        if axis[j] < 0:
            axis = -axis
    return theta * axis


def tool_rotation(view_dir, motion_dir, tol: float = 1e-4) -> np.ndarray:
    """Columns (motion, view x motion, view) for the end-effector."""
    eta = np.asarray(view_dir, dtype=float)
    tau = np.asarray(motion_dir, dtype=float)
    eta = eta / np.linalg.norm(eta)
    tau = tau / np.linalg.norm(tau)
    if abs(float(np.dot(eta, tau))) > tol:
        raise PoseError("view and motion directions are not orthogonal")
    tau = tau - np.dot(tau, eta) * eta
    tau /= np.linalg.norm(tau)
    return np.column_stack([tau, np.cross(eta, tau), eta])


def pose_from_path_point(point, bTo: RigidTransform) -> RobotPose:
    pos = bTo.apply_points(point.position)
    eta = bTo.apply_dirs(point.view_dir)
    tau = bTo.apply_dirs(point.motion_dir)
    return RobotPose(pos, rotation_to_axis_angle(tool_rotation(eta, tau)))


def path_to_robot_frame(path, bTo: RigidTransform) -> list[tuple[RobotPose, RobotPose]]:
    return [(pose_from_path_point(a, bTo), pose_from_path_point(b, bTo)) for a, b in path.pairs]


def pixel_to_local(i_x: float, i_y: float, pixel_size: float, working_distance: float, y_max: float) -> np.ndarray:
    return np.array([i_x * pixel_size, (i_y - y_max / 2.0) * pixel_size, working_distance])


def map_pixel_to_3d(pixel, pixel_size: float, working_distance: float, y_max: float,
                    anchor_pose: RobotPose, bTo: RigidTransform, patch_id: int = -1,
                    region_id: int = -1) -> DefectLocation:
    i_x, i_y = float(pixel[0]), float(pixel[1])
    if not 0 <= i_y < y_max:
        raise ValueError("pixel row outside the scan line")
    mu = pixel_to_local(i_x, i_y, pixel_size, working_distance, y_max)
    world = anchor_pose.transform.apply_points(mu)
    obj = bTo.inverse().apply_points(world)
    return DefectLocation((i_x, i_y), mu, world, obj, patch_id, region_id)


def robot_path_to_json(path, poses, speed: float | None = None, line_rate_hz: float | None = None) -> dict:
    return {
        "schema": ROBOT_PATH_SCHEMA,
        "units": {"position": "mm", "rotation": "rad"},
        "speed_mm_s": speed,
        "line_rate_hz": line_rate_hz,
        "poses": [{"region_id": int(a.region_id), "patch_id": int(a.patch_id),
                   "start": [float(x) for x in pa.vector], "stop": [float(x) for x in pb.vector]}
                  for (a, b), (pa, pb) in zip(path.pairs, poses)],
    }
