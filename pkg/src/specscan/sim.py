"""Hardware stand-ins: a depth sensor that loses the specular part, and a
dark-field line-scan camera that only sees defects."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, Plane, PointCloud, RigidTransform, TriangleMesh
from .inspection import Box
from .planner import CameraSpec, ScanPath, inside_cube

BACKGROUND = 20


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    mesh: TriangleMesh
    true_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    plane: Plane = field(default_factory=lambda: Plane([0.0, 0.0, 1.0, 0.0]))
    bTd: RigidTransform = field(default_factory=lambda: RigidTransform(
        np.diag([1.0, -1.0, -1.0]), [0.0, 0.0, 600.0]))  # looking straight down from 600 mm
    capture_grid_spacing: float = 1.0
    grid_extent: tuple[float, float] = (260.0, 260.0)
    grid_center: tuple[float, float] = (0.0, 0.0)  # in the plane's (u, v) axes
    depth_noise_sigma: float = 0.0
    seed: int = 0
    with_object: bool = True

    def __post_init__(self):
        if self.capture_grid_spacing <= 0 or self.depth_noise_sigma < 0:
            raise ValueError("grid spacing must be > 0 and noise >= 0")


@dataclass(frozen=True)
class Defect:
    point: np.ndarray
    radius: float
    contrast: float = 200.0
    dust: bool = False


@dataclass
class DefectSpec:
    defects: list[Defect] = field(default_factory=list)
    seed: int = 0

    def to_json(self) -> dict:
        return {"seed": self.seed,
                "defects": [{"point": [float(x) for x in d.point], "radius": float(d.radius),
                             "contrast": float(d.contrast), "dust": bool(d.dust)} for d in self.defects]}

    @classmethod
    def from_json(cls, doc: dict) -> "DefectSpec":
        return cls([Defect(np.asarray(d["point"], float), float(d["radius"]), float(d.get("contrast", 200.0)),
                           bool(d.get("dust", False))) for d in doc.get("defects", [])], int(doc.get("seed", 0)))


@dataclass
class TruthBox:
    defect_index: int
    box: Box
    complete: bool


@dataclass
class ScanResult:
    images: list[np.ndarray]
    truths: list[list[TruthBox]]
    coverage: float
    covered: int
    n_exterior: int


# -- depth capture --------------------------------------------------------------

def _grid(scene: SceneSpec):
    u, v, origin = scene.plane.basis()
    h = scene.capture_grid_spacing
    nu = int(math.floor(scene.grid_extent[0] / h)) + 1
    nv = int(math.floor(scene.grid_extent[1] / h)) + 1
    us = scene.grid_center[0] - scene.grid_extent[0] / 2 + h * np.arange(nu)
    vs = scene.grid_center[1] - scene.grid_extent[1] / 2 + h * np.arange(nv)
    return u, v, origin, us, vs


def silhouette_mask(mesh: TriangleMesh, scene: SceneSpec) -> np.ndarray:
    """Boolean (nu, nv) grid mask of points covered by the mesh projected
    along the plane normal."""
    u, v, origin, us, vs = _grid(scene)
    h = scene.capture_grid_spacing
    rel = mesh.vertices - origin
    uv = np.stack([rel @ u, rel @ v], axis=1)
    mask = np.zeros((len(us), len(vs)), dtype=bool)
    for tri in mesh.triangles:
        a, b, c = uv[tri]
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        i0 = max(int(math.ceil((lo[0] - us[0]) / h - 1e-9)), 0)
        i1 = min(int(math.floor((hi[0] - us[0]) / h + 1e-9)), len(us) - 1)
        j0 = max(int(math.ceil((lo[1] - vs[0]) / h - 1e-9)), 0)
        j1 = min(int(math.floor((hi[1] - vs[0]) / h + 1e-9)), len(vs) - 1)
        if i0 > i1 or j0 > j1:
            continue
        det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        if abs(det) < 1e-14:
            continue  # edge-on triangle, its neighbours cover the area
        gu, gv = np.meshgrid(us[i0:i1 + 1], vs[j0:j1 + 1], indexing="ij")
        l1 = ((gu - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (gv - a[1])) / det
        l2 = ((b[0] - a[0]) * (gv - a[1]) - (gu - a[0]) * (b[1] - a[1])) / det
        inside = (l1 >= 0) & (l2 >= 0) & (l1 + l2 <= 1)
        mask[i0:i1 + 1, j0:j1 + 1] |= inside
    return mask


def synth_depth_capture(scene: SceneSpec) -> PointCloud:
    """Grid of support-plane points in the depth-camera frame with the object's
    silhouette cut out (specular dropout) and optional noise along each
    viewing ray."""
    u, v, origin, us, vs = _grid(scene)
    gu, gv = np.meshgrid(us, vs, indexing="ij")
    pts = origin + gu[..., None] * u + gv[..., None] * v
    if scene.with_object:
        posed = scene.mesh.transformed(scene.true_pose)
        if scene.plane.signed_distance(posed.vertices).min() < -1e-6 * max(posed.bbox_diagonal, 1.0):
            raise SimulationError("object intersects the support plane")
        keep = ~silhouette_mask(posed, scene)
        if not keep.any():
            raise SimulationError("object silhouette covers the whole capture grid")
        pts = pts[keep]
    else:
        pts = pts.reshape(-1, 3)
    if scene.depth_noise_sigma > 0:
        rng = np.random.default_rng(scene.seed)
        rays = pts - scene.bTd.translation
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        pts = pts + rng.normal(0.0, scene.depth_noise_sigma, len(pts))[:, None] * rays
    return PointCloud(scene.bTd.inverse().apply_points(pts))


# -- line scan ------------------------------------------------------------------

def _first_hits(origins: np.ndarray, direction: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Nearest forward hit of parallel rays against triangles (Moller-Trumbore);
    NaN rows where a ray misses."""
    hits = np.full(origins.shape, np.nan)
    if len(tris) == 0 or len(origins) == 0:
        return hits
    v0, e1, e2 = tris[:, 0], tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-12
    v0, e1, e2, pvec, det = v0[ok], e1[ok], e2[ok], pvec[ok], det[ok]
    best = np.full(len(origins), np.inf)
    for start in range(0, len(origins), 512):
        o = origins[start:start + 512]
        tvec = o[:, None, :] - v0[None]
        uu = np.einsum("rtk,tk->rt", tvec, pvec) / det
        qvec = np.cross(tvec, e1[None])
        vv = np.einsum("rtk,k->rt", qvec, direction) / det
        tt = np.einsum("rtk,tk->rt", qvec, e2) / det
        valid = (uu >= 0) & (vv >= 0) & (uu + vv <= 1) & (tt > 1e-9)
        tt = np.where(valid, tt, np.inf)
        best[start:start + 512] = tt.min(axis=1)
    hit = np.isfinite(best)
    hits[hit] = origins[hit] + best[hit, None] * direction
    return hits


def n_lines(V_L: float, pixel_size: float) -> int:
    return int(math.floor(V_L / pixel_size + 1e-9)) + 1


def _render_patch(start, stop, cam: CameraSpec, defects: list[Defect], tris: np.ndarray, tri_reach: float):
    kappa, n = cam.pixel_size, cam.n_pixels
    tau, eta = start.motion_dir, start.view_dir
    lateral = np.cross(eta, tau)
    V_L = float(np.linalg.norm(stop.position - start.position))
    L = n_lines(V_L, kappa)
    img = np.full((n, L), BACKGROUND, dtype=np.uint8)
    truths = []
    centroids = tris.mean(axis=1)
    for di, d in enumerate(defects):
        rel = d.point - start.position
        a = rel @ tau / kappa
        b = rel @ lateral / kappa + n / 2.0
        reach = d.radius / kappa + 1.0
        c0, c1 = int(math.floor(a - reach)), int(math.ceil(a + reach))
        r0, r1 = int(math.floor(b - reach)), int(math.ceil(b + reach))
        if c1 < 0 or r1 < 0 or c0 > L - 1 or r0 > n - 1 or rel @ eta <= 0:
            continue
        complete = c0 >= 0 and r0 >= 0 and c1 <= L - 1 and r1 <= n - 1
        cs = np.arange(max(c0, 0), min(c1, L - 1) + 1)
        rs = np.arange(max(r0, 0), min(r1, n - 1) + 1)
        cc, rr = np.meshgrid(cs, rs)
        origins = (start.position + (cc.ravel() * kappa)[:, None] * tau
                   + ((rr.ravel() - n / 2.0) * kappa)[:, None] * lateral)
        # triangles near the line of sight through the defect, occluders included
        off = centroids - d.point
        perp = off - (off @ eta)[:, None] * eta
        near = np.linalg.norm(perp, axis=1) <= d.radius + tri_reach
        hits = _first_hits(origins, eta, tris[near])
        # NaN (missed rays) compares False; scatter from outside the depth of view is too blurred to register
        depth = (hits - start.position) @ eta - cam.working_distance
        lit = (np.linalg.norm(hits - d.point, axis=1) <= d.radius) & (np.abs(depth) <= cam.depth_of_view / 2)
        if not lit.any():
            continue
        lr, lc = rr.ravel()[lit], cc.ravel()[lit]
        val = min(255, int(round(BACKGROUND + d.contrast)))
        img[lr, lc] = np.maximum(img[lr, lc], val)
        if not d.dust:
            box = Box(int(lc.min()), int(lr.min()), int(lc.max()), int(lr.max()), int(lit.sum()))
            truths.append(TruthBox(di, box, complete))
    return img, truths


def scan_coverage(exterior: PointCloud, path: ScanPath, cam: CameraSpec) -> tuple[int, int]:
    covered = np.zeros(len(exterior), dtype=bool)
    for pair in path.pairs:
        covered |= inside_cube(exterior.points, pair, cam)
    return int(covered.sum()), len(exterior)


def simulate_line_scan(mesh: TriangleMesh, defects: DefectSpec, path: ScanPath, cam: CameraSpec,
                       exterior: PointCloud | None = None,
                       pose_error: RigidTransform | None = None) -> ScanResult:
    """One dark-field image per patch, rows = scan-line pixels, columns = lines.

    Everything is in the object frame. ``pose_error`` is the actual camera
    placement relative to the planned one (true pose inverse times estimated
    pose); geometry is moved by its inverse instead of moving every ray.
    """
    defect_list = list(defects.defects)
    tris = mesh.vertices[mesh.triangles]
    if pose_error is not None:
        inv = pose_error.inverse()
        tris = inv.apply_points(tris.reshape(-1, 3)).reshape(-1, 3, 3)
        defect_list = [Defect(inv.apply_points(d.point), d.radius, d.contrast, d.dust) for d in defect_list]
    edges = np.concatenate([tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 1], tris[:, 0] - tris[:, 2]])
    tri_reach = float(np.linalg.norm(edges, axis=1).max()) if len(edges) else 0.0
    images, truths = [], []
    for start, stop in path.pairs:
        img, t = _render_patch(start, stop, cam, defect_list, tris, tri_reach)
        images.append(img)
        truths.append(t)
    if exterior is not None:
        covered, total = scan_coverage(exterior, path, cam)
    else:
        covered = total = 0
    return ScanResult(images, truths, covered / total if total else float("nan"), covered, total)


def generate_defects(path: ScanPath, exterior: PointCloud, cam: CameraSpec, count: int, radius: float,
                     seed: int = 0, dust_count: int = 0, dust_radius: float | None = None) -> DefectSpec:
    """Place defects on exterior points near the middle of randomly chosen
    patches, each fully inside that patch's image and apart from the others.
    Dust specks go on random exterior points."""
    rng = np.random.default_rng(seed)
    kappa, w = cam.pixel_size, cam.working_distance
    margin = radius + 2.0 * kappa
    chosen: list[Defect] = []
    order = rng.permutation(len(path.pairs))
    for pi in order:
        if len(chosen) >= count:
            break
        start, stop = path.pairs[pi]
        V_L = float(np.linalg.norm(stop.position - start.position))
        if V_L < 2 * margin + 2 * kappa:
            continue
        anchor = start.position + w * start.view_dir
        center = anchor + 0.5 * V_L * start.motion_dir
        p = exterior.points[int(np.argmin(np.linalg.norm(exterior.points - center, axis=1)))]
        rel = p - start.position
        a = rel @ start.motion_dir
        b = rel @ np.cross(start.view_dir, start.motion_dir)
        if not (margin <= a <= V_L - margin and abs(b) <= cam.field_of_view / 2 - margin):
            continue
        if any(np.linalg.norm(p - d.point) < 4 * radius + 4 * kappa for d in chosen):
            continue
        chosen.append(Defect(p.copy(), radius))
    if len(chosen) < count:
        raise SimulationError(f"could only place {len(chosen)} of {count} defects")
    dust_radius = dust_radius if dust_radius is not None else 1.5 * kappa
    for i in rng.choice(len(exterior), size=dust_count, replace=False) if dust_count else []:
        chosen.append(Defect(exterior.points[i].copy(), dust_radius, 120.0, dust=True))
    return DefectSpec(chosen, seed)


def random_planar_pose(rng: np.random.Generator, max_rotation_deg: float = 30.0,
                       max_shift: float = 30.0, plane: Plane | None = None) -> RigidTransform:
    """Rotation about the plane normal plus an in-plane shift."""
    plane = plane or Plane([0.0, 0.0, 1.0, 0.0])
    angle = np.radians(rng.uniform(-max_rotation_deg, max_rotation_deg))
    u, v, _ = plane.basis()
    shift = rng.uniform(-max_shift, max_shift, 2)
    return RigidTransform.from_axis_angle(angle * plane.normal, shift[0] * u + shift[1] * v)


__all__ = ["SceneSpec", "Defect", "DefectSpec", "ScanResult", "TruthBox", "synth_depth_capture",
           "simulate_line_scan", "generate_defects", "scan_coverage", "random_planar_pose",
           "silhouette_mask", "SimulationError", "GeometryError"]
