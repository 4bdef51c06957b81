import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from specscan import shapes
from specscan.geometry import (
    GeometryError, Plane, PointCloud, RayFanConfig, RigidTransform, apply_transform, centroid,
    estimate_normals, exterior_indices, extract_boundary, filter_exterior, rotation_between, rotation_matrix,
    sample_mesh, TriangleMesh,
)


def brute_exterior(points, cfg):
    """Every ray against every point, angles via arccos; farthest wins, lowest index on ties."""
    c = np.array([math.fsum(points[:, i]) for i in range(3)]) / len(points)
    q = points - c
    dist = np.linalg.norm(q, axis=1)
    keep = set()
    for ray in cfg.directions():
        best, best_d = -1, -1.0
        for i in range(len(points)):
            if dist[i] == 0 or dist[i] > cfg.radius:
                continue
            ang = math.acos(max(-1.0, min(1.0, float(q[i] @ ray) / dist[i])))
            if ang < cfg.angular_tolerance and dist[i] > best_d:
                best, best_d = i, dist[i]
        if best >= 0:
            keep.add(best)
    return np.array(sorted(keep), dtype=np.int64)


def kahan_sum(values):
    total, comp = 0.0, 0.0
    for v in sorted(values):
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def sphere_points(n, radius, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


# -- sampling -------------------------------------------------------------------

def test_sample_single_triangle_inside():
    mesh = TriangleMesh([[0, 0, 0], [4, 0, 0], [0, 3, 0]], [[0, 1, 2]])
    cloud = sample_mesh(mesh, 100, seed=1)
    assert len(cloud) == 100
    x, y = cloud.points[:, 0], cloud.points[:, 1]
    # barycentric coordinates of the right triangle
    assert np.all(x >= 0) and np.all(y >= 0) and np.all(x / 4 + y / 3 <= 1 + 1e-12)
    assert np.all(cloud.points[:, 2] == 0)


def test_sample_area_ratio_binomial():
    # triangle A has 3x the area of triangle B, far apart so counts are separable
    mesh = TriangleMesh([[0, 0, 0], [3, 0, 0], [0, 2, 0], [10, 0, 0], [11, 0, 0], [10, 2, 0]],
                        [[0, 1, 2], [3, 4, 5]])
    cloud = sample_mesh(mesh, 4000, seed=7)
    n_a = int(np.sum(cloud.points[:, 0] < 5))
    assert abs(n_a - 3000) <= 0.05 * 3000
    assert abs((4000 - n_a) - 1000) <= 0.05 * 1000


def test_sample_deterministic():
    mesh = shapes.box()
    a = sample_mesh(mesh, 500, seed=3).points
    b = sample_mesh(mesh, 500, seed=3).points
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_mesh(mesh, 500, seed=4).points)


def test_sample_rejects_bad_input():
    with pytest.raises(GeometryError):
        sample_mesh(shapes.box(), 0)
    with pytest.raises(GeometryError):
        sample_mesh(TriangleMesh(np.zeros((3, 3)), np.zeros((0, 3))), 10)


# -- centroid -------------------------------------------------------------------

def test_centroid_examples():
    assert np.allclose(centroid(PointCloud([[0, 0, 0], [2, 0, 0]])), [1, 0, 0])
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
    assert np.all(np.abs(centroid(PointCloud(corners))) <= 1e-12)


def test_centroid_matches_kahan_oracle():
    pts = np.random.default_rng(0).uniform(-500, 500, size=(10000, 3))
    expected = np.array([kahan_sum(pts[:, i]) for i in range(3)]) / len(pts)
    assert np.allclose(centroid(PointCloud(pts)), expected, atol=1e-9, rtol=0)


def test_centroid_empty():
    with pytest.raises(GeometryError):
        centroid(PointCloud(np.zeros((0, 3))))


# -- exterior filter --------------------------------------------------------------

def test_exterior_concentric_spheres_keeps_outer_only():
    pts = np.vstack([sphere_points(1500, 50.0, 1), sphere_points(3000, 100.0, 2)])
    cfg = RayFanConfig(theta_steps=16, phi_steps=32, angular_tolerance=0.1)
    idx = exterior_indices(PointCloud(pts), cfg)
    assert len(idx) > 0
    assert np.allclose(np.linalg.norm(pts[idx], axis=1), 100.0)
    assert np.array_equal(idx, brute_exterior(pts, cfg))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_exterior_matches_brute_force_on_mesh_samples(seed):
    cloud = sample_mesh(shapes.mirror(n_rings=8, n_sectors=24), 1500, seed=seed)
    cfg = RayFanConfig(theta_steps=12, phi_steps=24, angular_tolerance=0.12)
    assert np.array_equal(exterior_indices(cloud, cfg), brute_exterior(cloud.points, cfg))


def test_exterior_on_convex_cloud_lies_on_hull():
    cloud = sample_mesh(shapes.uv_sphere(n_lat=10, n_lon=20), 3000, seed=5)
    out = filter_exterior(cloud, RayFanConfig(theta_steps=20, phi_steps=40))
    hull = ConvexHull(cloud.points)
    diag = np.linalg.norm(np.ptp(cloud.points, axis=0))
    h = out.points @ hull.equations[:, :3].T + hull.equations[:, 3]
    assert np.all(h.max(axis=1) >= -1e-6 * diag)


def test_exterior_jittered_repeat_point():
    base = np.array([1.0, 2.0, 3.0])
    pts = base + np.random.default_rng(0).normal(scale=1e-3, size=(4, 3))
    out = filter_exterior(PointCloud(pts))
    assert 0 < len(out) <= 4


def test_exterior_radius_cap_excludes_far_points():
    pts = sphere_points(2000, 100.0, 3)
    cfg = RayFanConfig(theta_steps=12, phi_steps=24, radius=50.0)
    assert len(exterior_indices(PointCloud(pts), cfg)) == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=4, max_value=300))
def test_exterior_is_duplicate_free_subset(seed, n):
    pts = np.random.default_rng(seed).normal(size=(n, 3)) * [30, 20, 10]
    idx = exterior_indices(PointCloud(pts), RayFanConfig(theta_steps=8, phi_steps=16))
    assert len(np.unique(idx)) == len(idx)
    assert np.all((idx >= 0) & (idx < n))


def test_exterior_needs_four_points():
    with pytest.raises(GeometryError):
        filter_exterior(PointCloud(np.eye(3)))


def test_ray_fan_config_validation():
    with pytest.raises(GeometryError):
        RayFanConfig(theta_steps=2)
    with pytest.raises(GeometryError):
        RayFanConfig(angular_tolerance=1.0)


# -- normals ------------------------------------------------------------------------

def test_normals_plane_tie_breaks_to_plus_z():
    g = np.arange(-10, 11, dtype=float)
    xx, yy = np.meshgrid(g, g)
    cloud = estimate_normals(PointCloud(np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], 1)), k=12)
    assert np.allclose(cloud.normals, [0, 0, 1], atol=1e-9)


def test_normals_sphere_analytic():
    cloud = sample_mesh(shapes.uv_sphere(radius=100.0), 6000, seed=2)
    n = estimate_normals(cloud, k=20).normals
    radial = cloud.points / np.linalg.norm(cloud.points, axis=1, keepdims=True)
    assert np.mean(np.einsum("ij,ij->i", n, radial) > 0.99) >= 0.99


def test_normals_cylinder_wall_perpendicular_to_axis():
    mesh = shapes.cylinder(radius=50.0, height=120.0, capped=False)
    cloud = sample_mesh(mesh, 10000, seed=3)
    n = estimate_normals(cloud, k=20).normals
    # stay clear of the open rims where neighbourhoods are one-sided
    mid = np.abs(cloud.points[:, 2]) < 40.0
    tilt = np.degrees(np.arcsin(np.clip(np.abs(n[mid, 2]), 0, 1)))
    assert tilt.max() <= 2.0


@pytest.mark.parametrize("seed", [0, 1])
def test_normals_unit_and_outward(seed):
    cloud = sample_mesh(shapes.box(), 3000, seed=seed)
    out = estimate_normals(cloud, k=20)
    ok = out.valid_normal_mask()
    assert ok.all()
    assert np.allclose(np.linalg.norm(out.normals, axis=1), 1.0, atol=1e-6)
    c = centroid(cloud)
    assert np.all(np.einsum("ij,ij->i", out.normals, cloud.points - c) >= -1e-9)


def test_normals_collinear_neighbourhood_is_nan():
    pts = np.stack([np.arange(30.0), np.zeros(30), np.zeros(30)], 1)
    out = estimate_normals(PointCloud(pts), k=5)
    assert not out.valid_normal_mask().any()


def test_normals_precondition():
    with pytest.raises(GeometryError):
        estimate_normals(PointCloud(np.random.default_rng(0).normal(size=(5, 3))), k=5)


# -- boundary -----------------------------------------------------------------------

def _grid_disk(r_out, r_in=0.0, spacing=1.0):
    g = np.arange(-r_out, r_out + spacing, spacing)
    xx, yy = np.meshgrid(g, g)
    rr = np.hypot(xx, yy)
    keep = (rr <= r_out) & (rr >= r_in)
    return np.stack([xx[keep], yy[keep], np.zeros(keep.sum())], 1)


def test_boundary_of_filled_disk_is_outer_ring():
    b = extract_boundary(PointCloud(_grid_disk(50.0)), k=12)
    r = np.hypot(b.points[:, 0], b.points[:, 1])
    assert len(b) > 0 and r.min() >= 48.0


def test_boundary_of_annulus_has_both_rims():
    b = extract_boundary(PointCloud(_grid_disk(50.0, 20.0)), k=12)
    r = np.hypot(b.points[:, 0], b.points[:, 1])
    inner, outer = r[r < 35], r[r >= 35]
    assert len(inner) > 20 and len(outer) > 50
    assert inner.max() <= 22.0 and outer.min() >= 48.0


def test_boundary_collinear_endpoints():
    pts = PointCloud([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    b = extract_boundary(pts, k=2)
    xs = sorted(b.points[:, 0])
    assert xs[0] == 0 and xs[-1] == 2


def test_boundary_needs_enough_points():
    with pytest.raises(GeometryError):
        extract_boundary(PointCloud(np.zeros((5, 3))), k=12)


# -- transforms ---------------------------------------------------------------------

def random_transform(rng):
    return RigidTransform.from_axis_angle(rng.normal(size=3), rng.normal(scale=50, size=3))


def test_apply_transform_examples():
    pts = np.random.default_rng(0).normal(size=(20, 3))
    cloud = PointCloud(pts)
    assert np.array_equal(apply_transform(cloud, RigidTransform.identity()).points, pts)
    assert np.allclose(apply_transform(cloud, RigidTransform.from_translation([1, 2, 3])).points, pts + [1, 2, 3])


def test_apply_transform_composition():
    rng = np.random.default_rng(1)
    T1, T2 = random_transform(rng), random_transform(rng)
    cloud = PointCloud(rng.normal(size=(50, 3)), rng.normal(size=(50, 3)))
    a = apply_transform(cloud, T1 @ T2)
    b = apply_transform(apply_transform(cloud, T2), T1)
    assert np.allclose(a.points, b.points, atol=1e-9)
    assert np.allclose(a.normals, b.normals, atol=1e-12)
    M = T1.matrix @ T2.matrix
    assert np.allclose((T1 @ T2).matrix, M, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_apply_transform_preserves_distances(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(scale=100, size=(30, 3))
    moved = apply_transform(PointCloud(pts), random_transform(rng)).points
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    d1 = np.linalg.norm(moved[:, None] - moved[None], axis=2)
    assert np.all(np.abs(d0 - d1) <= 1e-9 * np.maximum(d0, 1.0))


def test_inverse_round_trip():
    rng = np.random.default_rng(2)
    T = random_transform(rng)
    p = rng.normal(size=(10, 3))
    assert np.allclose(T.inverse().apply_points(T.apply_points(p)), p, atol=1e-12)


def test_rigid_transform_rejects_reflection():
    with pytest.raises(GeometryError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))


def test_rotation_matrix_matches_matrix_exponential():
    from scipy.linalg import expm
    rng = np.random.default_rng(3)
    for _ in range(10):
        v = rng.normal(size=3)
        K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
        assert np.allclose(rotation_matrix(v), expm(K), atol=1e-12)


@pytest.mark.parametrize("a,b", [([0, 0, 1], [0, 0, 1]), ([0, 0, 1], [0, 0, -1]), ([1, 0, 0], [-1, 0, 0]),
                                 ([1, 2, 3], [-3, 0.5, 2])])
def test_rotation_between(a, b):
    R = rotation_between(a, b)
    a, b = np.asarray(a, float), np.asarray(b, float)
    assert np.allclose(R @ (a / np.linalg.norm(a)), b / np.linalg.norm(b), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)


def test_plane_signed_distance_and_basis():
    p = Plane([0, 0, 2, -10])  # z = 5
    assert np.isclose(p.signed_distance([0, 0, 8]), 3.0)
    u, v, o = p.basis()
    assert np.isclose(u @ v, 0) and np.allclose(np.cross(u, v), p.normal)
    assert np.allclose(o, [0, 0, 5])
    with pytest.raises(GeometryError):
        Plane([0, 0, 0, 1])
