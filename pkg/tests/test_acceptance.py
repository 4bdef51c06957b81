"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line
that is repeated in the terminal summary."""

import itertools
import json
import math
import time
from collections import deque
from pathlib import Path

import numpy as np
import pytest

from specscan import shapes
from specscan.geometry import (
    PointCloud, RayFanConfig, RigidTransform, estimate_normals, exterior_indices, filter_exterior, sample_mesh,
)
from specscan.inspection import DetectConfig, detect_defects, score_detections, Box
from specscan.pipeline import PipelineConfig, Run, run_e2e
from specscan.planner import CameraSpec, PathPoint, order_regions, plan_path, validate_completeness
from specscan.registration import compose_hand_eye, pose_error, register_object
from specscan.scan_control import RobotPose, depth_of_view, field_of_view, line_rate, map_pixel_to_3d
from specscan.segmentation import SegmentationConfig, kmeans_segment
from specscan.sim import SceneSpec, random_planar_pose, scan_coverage, synth_depth_capture

pytestmark = pytest.mark.slow


def log(acceptance_log, n, ok, detail, seconds):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}  ({seconds:.2f} s)"
    acceptance_log.append(line)
    print(line)


def meshes():
    return {"sphere": shapes.uv_sphere(), "cylinder": shapes.cylinder(), "box": shapes.box()}


# 1 -------------------------------------------------------------------------------

PUBLISHED = [
    ((20, 3, 0), (0.870, 1.000, 0.930)),
    ((9, 3, 0), (0.750, 1.000, 0.857)),
    ((11, 1, 2), (0.917, 0.846, 0.880)),
    ((12, 4, 3), (0.750, 0.800, 0.774)),
    ((10, 5, 0), (0.667, 1.000, 0.800)),
]


def test_criterion_1_detection_metrics(acceptance_log):
    t0 = time.perf_counter()
    bad = []
    for (tp, fp, fn), expected in PUBLISHED:
        truth = [Box(20 * i, 0, 20 * i + 9, 9) for i in range(tp + fn)]
        detected = truth[:tp] + [Box(20 * i, 50, 20 * i + 9, 59) for i in range(fp)]
        m = score_detections(detected, truth, 0.3)
        got = (round(m.precision, 3), round(m.recall, 3), round(m.f_measure, 3))
        if (m.TP, m.FP, m.FN) != (tp, fp, fn) or got != expected:
            bad.append(((tp, fp, fn), got))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 1.0
    log(acceptance_log, 1, ok, f"{len(PUBLISHED) - len(bad)}/{len(PUBLISHED)} rows to 3 decimals", dt)
    assert not bad, bad
    assert dt < 1.0


# 2 -------------------------------------------------------------------------------

def test_criterion_2_segmentation_contract(acceptance_log):
    details, ok, worst = [], True, 0.0
    for name, mesh in meshes().items():
        t0 = time.perf_counter()
        cloud = estimate_normals(sample_mesh(mesh, 6000, seed=21), k=20)
        assert len(cloud) >= 5000
        counts = {}
        for g in (15, 18, 20):
            seg = kmeans_segment(cloud, SegmentationConfig(gamma=math.radians(g), seed=1))
            for r in seg.regions:
                n = cloud.normals[r.point_indices]
                ang = np.degrees(np.arccos(np.clip(n @ r.avg_normal, -1, 1)))
                ok &= bool(ang.max() < g)
            assert sorted(np.concatenate([r.point_indices for r in seg.regions]).tolist()) == list(range(len(cloud)))
            counts[g] = len(seg.regions)
        dt = time.perf_counter() - t0
        worst = max(worst, dt)
        ok &= counts[15] >= counts[18] >= counts[20] and dt < 60
        details.append(f"{name} {counts[15]}/{counts[18]}/{counts[20]}")
    log(acceptance_log, 2, ok, "regions at 15/18/20 deg: " + ", ".join(details), worst)
    assert ok


# 3 -------------------------------------------------------------------------------

def test_criterion_3_completeness_and_coverage(acceptance_log):
    cam = CameraSpec()
    t0 = time.perf_counter()
    ok, details = True, []
    for name, mesh in {**meshes(), "mirror": shapes.mirror()}.items():
        ext = estimate_normals(filter_exterior(sample_mesh(mesh, 6000, seed=5)), k=20)
        seg = kmeans_segment(ext, SegmentationConfig())
        path, plans = plan_path(ext, seg, cam)
        violations = sum(len(validate_completeness(p, pair, cam, plan.frame, tol=1e-9).violations)
                         for plan in plans for p, pair in zip(plan.patches, plan.pairs))
        covered, total = scan_coverage(ext, path, cam)
        ok &= violations == 0 and covered == total
        details.append(f"{name} {len(path.pairs)} patches, {violations} violations, coverage {covered}/{total}")
    log(acceptance_log, 3, ok, "; ".join(details), time.perf_counter() - t0)
    assert ok


# 4 -------------------------------------------------------------------------------

def test_criterion_4_registration(acceptance_log):
    mesh = shapes.mirror()
    model = sample_mesh(mesh, 40000, seed=7)
    diag = mesh.bbox_diagonal
    rng = np.random.default_rng(2024)
    poses = [random_planar_pose(rng, 30.0, 30.0) for _ in range(20)]
    ok, worst_time = True, 0.0
    summary = {}
    for noise, rot_tol, pct_tol in ((0.0, 0.5, 0.5), (1.0, 2.0, 2.0)):
        rots, pcts, monotone = [], [], True
        for i, pose in enumerate(poses):
            t0 = time.perf_counter()
            scene = SceneSpec(mesh, pose, depth_noise_sigma=noise, seed=100 + i)
            res = register_object(model, synth_depth_capture(scene), scene.plane, scene.bTd)
            worst_time = max(worst_time, time.perf_counter() - t0)
            r, t = pose_error(res.transform, pose)
            rots.append(r)
            pcts.append(100 * t / diag)
            h = res.rms_history
            monotone &= all(b <= a for a, b in zip(h, h[1:]))
        summary[noise] = (max(rots), max(pcts), monotone)
        ok &= max(rots) < rot_tol and max(pcts) < pct_tol and monotone
    ok &= worst_time < 10
    detail = "; ".join(f"noise {n:g} mm: max {r:.3f} deg, {p:.3f}% diag, rms non-increasing {m}"
                       for n, (r, p, m) in summary.items())
    log(acceptance_log, 4, ok, detail + f"; slowest scene {worst_time:.2f} s", worst_time)
    assert ok


# 5 -------------------------------------------------------------------------------

def exterior_oracle(points, cfg):
    """Angle of every point to every ray via arccos; farthest wins, lowest index on ties."""
    q = points - points.mean(axis=0)
    dist = np.linalg.norm(q, axis=1)
    usable = (dist > 0) & (dist <= cfg.radius)
    unit = np.where(usable[:, None], q / np.where(dist > 0, dist, 1)[:, None], 0)
    keep = set()
    for ray in cfg.directions():
        ang = np.arccos(np.clip(unit @ ray, -1, 1))
        member = usable & (ang < cfg.angular_tolerance)
        if member.any():
            d = np.where(member, dist, -1)
            keep.add(int(np.argmax(d)))
    return np.array(sorted(keep))


def flood_fill(binary, s):
    h, w = binary.shape
    seen = np.zeros_like(binary)
    out = []
    for r0, c0 in zip(*np.nonzero(binary)):
        if seen[r0, c0]:
            continue
        seen[r0, c0] = True
        q, cells = deque([(r0, c0)]), []
        while q:
            r, c = q.popleft()
            cells.append((r, c))
            for dr, dc in itertools.product((-1, 0, 1), repeat=2):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and binary[rr, cc] and not seen[rr, cc]:
                    seen[rr, cc] = True
                    q.append((rr, cc))
        if len(cells) >= s:
            rs, cs = zip(*cells)
            out.append((min(cs), min(rs), max(cs), max(rs), len(cells)))
    return sorted(out)


def greedy_oracle(entries):
    order, left = [0], list(range(1, len(entries)))
    while left:
        end = entries[order[-1]][1][-1][1].position
        d = [math.dist(entries[i][1][0][0].position, end) for i in left]
        order.append(left.pop(d.index(min(d))))
    return [entries[i][0] for i in order]


def test_criterion_5_oracles(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    checks = {}

    # exterior filter: concentric spheres and the mirror
    inner = sample_mesh(shapes.uv_sphere(50.0), 1500, seed=1).points
    outer = sample_mesh(shapes.uv_sphere(100.0), 1500, seed=2).points
    mirror = sample_mesh(shapes.mirror(), 3000, seed=3).points
    cfg = RayFanConfig()
    ext_ok = True
    for pts in (np.vstack([inner, outer]), mirror):
        ext_ok &= np.array_equal(exterior_indices(PointCloud(pts), cfg), exterior_oracle(pts, cfg))
    checks["exterior"] = ext_ok

    # components over 50 random binary images
    comp_ok = True
    for k in range(50):
        img = (rng.random((60, 90)) < rng.uniform(0.05, 0.35)).astype(np.uint8) * 255
        got = sorted((b.x_min, b.y_min, b.x_max, b.y_max, b.area)
                     for b in detect_defects(img, DetectConfig(area_threshold=8)))
        comp_ok &= got == flood_fill(img > 0, 8)
    checks["components"] = comp_ok

    # region ordering on up to 8 regions
    order_ok = True
    for trial in range(200):
        n = 1 + trial % 8
        entries = []
        for rid in range(n):
            pos = rng.uniform(-300, 300, size=(int(rng.integers(1, 4)), 2, 3))
            entries.append((rid, [tuple(PathPoint(p, np.array([0.0, 0, -1]), np.array([1.0, 0, 0]), rid, j)
                                        for p in pair) for j, pair in enumerate(pos)]))
        order_ok &= order_regions(entries).region_order == greedy_oracle(entries)
    checks["ordering"] = order_ok

    # hand-eye composition
    he_err = 0.0
    for _ in range(200):
        a, b, c = (RigidTransform.from_axis_angle(rng.normal(size=3), rng.uniform(-500, 500, 3)) for _ in range(3))
        he_err = max(he_err, float(np.abs(compose_hand_eye(a, b, c).matrix - a.matrix @ b.matrix @ c.matrix).max()))
    checks["hand-eye"] = he_err <= 1e-12

    ok = all(checks.values())
    log(acceptance_log, 5, ok, ", ".join(f"{k} {'ok' if v else 'MISMATCH'}" for k, v in checks.items())
        + f" (hand-eye max diff {he_err:.1e})", time.perf_counter() - t0)
    assert ok, checks


# 6 -------------------------------------------------------------------------------

def test_criterion_6_formulas(acceptance_log):
    t0 = time.perf_counter()
    loc = map_pixel_to_3d((100, 1000), 0.01, 15.7, 2000, RobotPose(np.zeros(3), np.zeros(3)),
                          RigidTransform.identity())
    values = {
        "field_of_view": (field_of_view(100, 2 * math.atan(0.5)), 100.0),
        "depth_of_view": (depth_of_view(100, 8, 15, 16), 6.25),
        "line_rate": (line_rate(1000, 100, 50), 500.0),
    }
    ok = all(abs(a - b) <= 1e-9 for a, b in values.values())
    ok &= bool(np.all(np.abs(loc.world - [1.0, 0.0, 15.7]) <= 1e-9))
    detail = ", ".join(f"{k} {a:.9g}" for k, (a, _) in values.items()) + f", pixel map {loc.world.tolist()}"
    log(acceptance_log, 6, ok, detail, time.perf_counter() - t0)
    assert ok


# 7 / 8 -----------------------------------------------------------------------------

ARTIFACT_SUFFIXES = {".json", ".csv", ".pgm"}


def e2e(out: Path):
    cfg = PipelineConfig()
    t0 = time.perf_counter()
    run_e2e(Run(cfg, out, figures=False, log=lambda *a: None))
    return cfg, time.perf_counter() - t0


@pytest.fixture(scope="module")
def e2e_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("accept")
    return [(base / name, *e2e(base / name)) for name in ("a", "b")]


def test_criterion_7_end_to_end(acceptance_log, e2e_runs):
    out, cfg, dt = e2e_runs[0]
    kappa = cfg.camera.pixel_size
    assert cfg.defects.radius >= 5 * kappa
    limit = 2 * kappa + cfg.scene.capture_grid_spacing
    total = next(line for line in (out / "metrics.csv").read_text().splitlines() if line.startswith("total,"))
    _, tp, fp, fn, *_ = total.split(",")
    tp, fp, fn = int(tp), int(fp), int(fn)
    mapped = json.loads((out / "defect_map.json").read_text())["defects"]
    errors = [d["error_mm"] for d in mapped if "error_mm" in d]
    injected = {i for i, d in enumerate(json.loads((out / "defects.json").read_text())["defects"]) if not d["dust"]}
    found = {d["truth_defect"] for d in mapped if "truth_defect" in d}
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    ok = (tp > 0 and precision == 1.0 and recall == 1.0 and found == injected
          and len(errors) == tp and max(errors) <= limit and dt < 120)
    log(acceptance_log, 7, ok, f"TP/FP/FN {tp}/{fp}/{fn}, {len(found)}/{len(injected)} defects found, "
        f"max map error {max(errors, default=float('nan')):.3f} mm (limit {limit:.2f})", dt)
    assert ok


def test_criterion_8_determinism(acceptance_log, e2e_runs):
    (a, _, ta), (b, _, tb) = e2e_runs
    t0 = time.perf_counter()
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.suffix in ARTIFACT_SUFFIXES)
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.suffix in ARTIFACT_SUFFIXES)
    differ = [str(p) for p in files_a if (a / p).read_bytes() != (b / p).read_bytes()]
    ok = files_a == files_b and not differ and len(files_a) > 0
    log(acceptance_log, 8, ok, f"{len(files_a)} JSON/CSV/PGM artifacts compared, {len(differ)} differ",
        ta + tb + time.perf_counter() - t0)
    assert ok, differ
