"""Point-cloud and mesh primitives shared by every pipeline stage.

All coordinates are millimetres. Arrays are ``float64`` with shape ``(N, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise GeometryError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def without_degenerate(self, eps: float = 1e-12) -> "TriangleMesh":
        keep = self.triangle_areas() > eps
        return TriangleMesh(self.vertices, self.triangles[keep])

    def transformed(self, T: "RigidTransform") -> "TriangleMesh":
        return TriangleMesh(T.apply_points(self.vertices), self.triangles)

    @property
    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))


@dataclass(frozen=True)
class PointCloud:
    """Positions with optional unit normals.

    Rows of ``normals`` that are NaN mark points whose normal could not be
    estimated; downstream stages skip them.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", p)
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(n) != len(p):
                raise GeometryError("normals and points differ in length")
            object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        normals = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], normals)

    def valid_normal_mask(self) -> np.ndarray:
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return np.all(np.isfinite(self.normals), axis=1)


def _as_rotation(R) -> np.ndarray:
    R = np.asarray(R, dtype=float).reshape(3, 3)
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
        raise GeometryError("rotation must be orthonormal with det +1")
    return R


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    @classmethod
    def from_axis_angle(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotation_matrix(rotvec), translation)

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def apply_points(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_dirs(self, d) -> np.ndarray:
        return np.asarray(d, dtype=float) @ self.rotation.T

    def rotation_only(self) -> "RigidTransform":
        return RigidTransform(self.rotation, np.zeros(3))


def rotation_matrix(rotvec) -> np.ndarray:
    """Rodrigues formula: axis-angle vector to 3x3 rotation."""
    v = np.asarray(rotvec, dtype=float).reshape(3)
    theta = float(np.linalg.norm(v))
    if theta < 1e-15:
        return np.eye(3)
    k = v / theta
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def rotation_between(a, b) -> np.ndarray:
    """Minimal rotation taking unit vector ``a`` onto unit vector ``b``.

    The antiparallel case is resolved by a half turn about x, or about y when
    ``a`` itself lies on the x axis.
    """
    a = unit(a)
    b = unit(b)
    c = float(np.dot(a, b))
    axis = np.cross(a, b)
    s = float(np.linalg.norm(axis))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        helper = np.array([1.0, 0.0, 0.0])
        if abs(a[0]) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        axis = unit(helper - np.dot(helper, a) * a)
        return rotation_matrix(np.pi * axis)
    return rotation_matrix(axis / s * np.arctan2(s, c))


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise GeometryError("cannot normalise a zero vector")
    return v / n


@dataclass(frozen=True)
class Plane:
    """A*x + B*y + C*z + D = 0 with (A, B, C) stored unit length."""

    coefficients: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.coefficients, dtype=float).reshape(4)
        n = np.linalg.norm(f[:3])
        if n == 0:
            raise GeometryError("plane normal is zero")
        object.__setattr__(self, "coefficients", f / n)

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        n = unit(normal)
        return cls(np.append(n, -np.dot(n, point)))

    @property
    def normal(self) -> np.ndarray:
        return self.coefficients[:3]

    @property
    def offset(self) -> float:
        return float(self.coefficients[3])

    def signed_distance(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        A, B, C, D = self.coefficients
        return A * p[..., 0] + B * p[..., 1] + C * p[..., 2] + D

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """In-plane axes (u, v) and the point on the plane closest to the origin."""
        n = self.normal
        helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = unit(helper - np.dot(helper, n) * n)
        v = np.cross(n, u)
        return u, v, -self.offset * n


@dataclass(frozen=True)
class RayFanConfig:
    theta_steps: int = 64
    phi_steps: int = 128
    radius: float = np.inf
    angular_tolerance: float = 0.05

    def __post_init__(self):
        if self.theta_steps < 4 or self.phi_steps < 4:
            raise GeometryError("ray fan needs at least 4 steps per angle")
        if not 0 < self.angular_tolerance < np.pi / 4:
            raise GeometryError("angular_tolerance must lie in (0, pi/4)")

    def directions(self) -> np.ndarray:
        theta = np.linspace(0.0, np.pi, self.theta_steps)
        phi = np.arange(self.phi_steps) * (2.0 * np.pi / self.phi_steps)
        t, p = np.meshgrid(theta, phi, indexing="ij")
        return np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1).reshape(-1, 3)


def sample_mesh(mesh: TriangleMesh, n_points: int, seed: int = 0) -> PointCloud:
    """Area-weighted random surface samples, uniform within each triangle."""
    if n_points < 1:
        raise GeometryError("n_points must be >= 1")
    if len(mesh.triangles) == 0:
        raise GeometryError("mesh has no triangles")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise GeometryError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n_points, p=areas / total)
    u = rng.random(n_points)
    v = rng.random(n_points)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.vertices[mesh.triangles[face]]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return PointCloud(pts)


def centroid(cloud: PointCloud) -> np.ndarray:
    if len(cloud) == 0:
        raise GeometryError("centroid of an empty cloud")
    return cloud.points.sum(axis=0) / len(cloud)


def exterior_indices(cloud: PointCloud, cfg: RayFanConfig = RayFanConfig()) -> np.ndarray:
    """Sorted indices of the farthest point inside each ray cone from the centroid.

    A point belongs to the ray l when the angle between (point - centroid)
    and l is below ``cfg.angular_tolerance``; among a ray's members the one
    farthest from the centroid wins, lowest index on ties.
    """
    if len(cloud) < 4:
        raise GeometryError("exterior filtering needs at least 4 points")
    q = cloud.points - centroid(cloud)
    qx, qy, qz = q[:, 0], q[:, 1], q[:, 2]
    dist = np.sqrt(qx * qx + qy * qy + qz * qz)
    usable = (dist > 0) & (dist <= cfg.radius)
    cand_idx = np.flatnonzero(usable)
    if len(cand_idx) == 0:
        return cand_idx
    qhat = q[cand_idx] / dist[cand_idx, None]
    tree = cKDTree(qhat)
    cos_tol = np.cos(cfg.angular_tolerance)
    chord = 2.0 * np.sin(cfg.angular_tolerance / 2.0) + 1e-9
    rays = cfg.directions()
    hits = tree.query_ball_point(rays, chord)
    chosen = []
    for ray, members in zip(rays, hits):
        if not members:
            continue
        m = cand_idx[np.sort(np.asarray(members))]
        cosang = (qx[m] * ray[0] + qy[m] * ray[1] + qz[m] * ray[2]) / dist[m]
        m = m[cosang > cos_tol]
        if len(m):
            chosen.append(m[np.argmax(dist[m])])
    return np.unique(np.asarray(chosen, dtype=np.int64))


def filter_exterior(cloud: PointCloud, cfg: RayFanConfig = RayFanConfig()) -> PointCloud:
    return cloud.subset(exterior_indices(cloud, cfg))


def _orient_outward(normals: np.ndarray, offsets: np.ndarray, scale: float) -> np.ndarray:
    d = np.einsum("ij,ij->i", normals, offsets)
    flip = d < 0
    tie = np.abs(d) <= 1e-9 * max(scale, 1.0)
    # on a tie prefer +z, then +y, then +x
    key = np.where(np.abs(normals[:, 2]) > 1e-12, normals[:, 2],
                   np.where(np.abs(normals[:, 1]) > 1e-12, normals[:, 1], normals[:, 0]))
    flip = np.where(tie, key < 0, flip)
    normals = normals.copy()
    normals[flip] *= -1.0
    return normals


def estimate_normals(cloud: PointCloud, k: int = 20) -> PointCloud:
    """PCA normals over the k nearest neighbours (the point included), oriented
    away from the cloud centroid. Rank-deficient neighbourhoods get NaN rows."""
    n = len(cloud)
    if not (n > k >= 3):
        raise GeometryError(f"need cloud size > k >= 3 (size={n}, k={k})")
    pts = cloud.points
    _, idx = cKDTree(pts).query(pts, k=k)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    c = centroid(cloud)
    scale = float(np.linalg.norm(pts.max(0) - pts.min(0)))
    normals = _orient_outward(normals, pts - c, scale)
    degenerate = evals[:, 1] <= 1e-12 * np.maximum(evals[:, 2], 1e-300)
    normals[degenerate] = np.nan
    return PointCloud(pts, normals)


def _neighbours_without_self(pts: np.ndarray, k: int) -> np.ndarray:
    _, idx = cKDTree(pts).query(pts, k=k + 1)
    own = idx == np.arange(len(pts))[:, None]
    # rows where self was not returned (duplicates): drop the last neighbour instead
    missing = ~own.any(axis=1)
    own[missing, -1] = True
    order = np.argsort(own, axis=1, kind="stable")
    return np.take_along_axis(idx, order, axis=1)[:, :k]


def boundary_mask(cloud: PointCloud, k: int = 12, gap_threshold: float = np.pi / 2) -> np.ndarray:
    """Angle-gap boundary test in each point's local tangent plane."""
    pts = cloud.points
    n = len(pts)
    if n <= k:
        raise GeometryError(f"boundary extraction needs more than k={k} points, got {n}")
    nbr = _neighbours_without_self(pts, k)
    offsets = pts[nbr] - pts[:, None, :]
    local = np.concatenate([offsets, np.zeros((n, 1, 3))], axis=1)
    local = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local)
    _, evecs = np.linalg.eigh(cov)
    e1 = evecs[:, :, 2]
    e2 = evecs[:, :, 1]
    u = np.einsum("nki,ni->nk", offsets, e1)
    v = np.einsum("nki,ni->nk", offsets, e2)
    length = np.linalg.norm(offsets, axis=2)
    ang = np.arctan2(v, u)
    zero = length <= 1e-12 * max(1.0, float(np.abs(pts).max()))
    all_zero = zero.all(axis=1)
    first_valid = np.argmax(~zero, axis=1)
    fill = ang[np.arange(n), first_valid]
    ang = np.where(zero, fill[:, None], ang)
    ang.sort(axis=1)
    gaps = np.diff(ang, axis=1)
    wrap = ang[:, 0] + 2.0 * np.pi - ang[:, -1]
    max_gap = np.maximum(gaps.max(axis=1) if k > 1 else 0.0, wrap)
    return (max_gap > gap_threshold) | all_zero


def extract_boundary(cloud: PointCloud, k: int = 12, gap_threshold: float = np.pi / 2) -> PointCloud:
    return cloud.subset(np.flatnonzero(boundary_mask(cloud, k, gap_threshold)))


def apply_transform(cloud: PointCloud, T: RigidTransform) -> PointCloud:
    normals = None if cloud.normals is None else T.apply_dirs(cloud.normals)
    return PointCloud(T.apply_points(cloud.points), normals)
