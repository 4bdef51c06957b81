"""Stage functions behind the command line.

Each stage reads the previous stage's files from the output directory and
writes its own, so stages can be run one at a time or chained. Everything
random derives from the single root seed in the config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import platform
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import inspection as insp
from .geometry import (
    GeometryError, PointCloud, RayFanConfig, RigidTransform, estimate_normals, filter_exterior, sample_mesh,
)
from .meshio import MeshParseError, load_mesh, read_ply_cloud, write_ply
from .planner import (
    CameraSpec, PlanningError, dumps, plan_path, scan_path_from_json, scan_path_to_json, validate_completeness,
)
from .registration import (
    BoundaryConfig, IcpConfig, RegistrationError, pose_error, register_object, transform_from_row_major,
)
from .scan_control import RobotPose, line_rate, map_pixel_to_3d, path_to_robot_frame, robot_path_to_json
from .segmentation import SegmentationConfig, SegmentationError, kmeans_segment, region_colors
from .sim import (
    DefectSpec, SceneSpec, SimulationError, generate_defects, random_planar_pose, simulate_line_scan,
    synth_depth_capture,
)

MANIFEST = "run_manifest.json"
STAGES = ("sample", "segment", "plan", "register", "scan-sim", "detect", "map")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class SceneConfig:
    capture_grid_spacing: float = 1.0
    depth_noise_sigma: float = 1.0
    grid_extent: tuple[float, float] = (260.0, 260.0)
    sensor_height: float = 600.0
    max_rotation_deg: float = 30.0
    max_shift: float = 30.0
    pose: tuple | None = None  # 12 row-major numbers; random planar pose when None


@dataclass(frozen=True)
class DefectConfig:
    count: int = 6
    radius: float = 1.0
    contrast: float = 200.0
    dust_count: int = 10
    dust_radius: float | None = None


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    mesh: str | None = None  # bundled mirror when None
    n_samples: int = 6000
    model_samples: int = 40000
    normals_k: int = 20
    speed: float = 50.0  # mm/s along each patch
    iou_threshold: float = 0.3
    ray_fan: RayFanConfig = field(default_factory=RayFanConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    camera: CameraSpec = field(default_factory=CameraSpec)
    icp: IcpConfig = field(default_factory=IcpConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    detect: insp.DetectConfig = field(default_factory=insp.DetectConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    defects: DefectConfig = field(default_factory=DefectConfig)

    def seeds(self) -> dict[str, int]:
        names = ("sample", "segmentation", "model", "pose", "noise", "defects")
        state = np.random.SeedSequence(self.seed).generate_state(len(names))
        return {n: int(s) for n, s in zip(names, state)}


# angles live in radians in code and in degrees in config files
_DEGREES = {"segmentation": {"gamma": "gamma_deg"}, "camera": {"beta": "beta_deg"},
            "boundary": {"model_gap": "model_gap_deg", "capture_gap": "capture_gap_deg"}}
_SKIP = {"segmentation": {"seed"}}
_SECTIONS = {"ray_fan": RayFanConfig, "segmentation": SegmentationConfig, "camera": CameraSpec,
             "icp": IcpConfig, "boundary": BoundaryConfig, "detect": insp.DetectConfig,
             "scene": SceneConfig, "defects": DefectConfig}


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return None
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def config_to_dict(cfg: PipelineConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            sec = {}
            for sf in dataclasses.fields(value):
                if sf.name in _SKIP.get(f.name, ()):
                    continue
                v = getattr(value, sf.name)
                key = _DEGREES.get(f.name, {}).get(sf.name)
                if key:
                    sec[key] = math.degrees(v)
                else:
                    sec[sf.name] = _jsonable(v)
            out[f.name] = sec
        else:
            out[f.name] = _jsonable(value)
    return out


def _section_from_dict(name, cls, doc: dict):
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    renamed = {v: k for k, v in _DEGREES.get(name, {}).items()}
    kwargs = {}
    allowed = {f.name for f in dataclasses.fields(cls)} - _SKIP.get(name, set())
    for key, value in doc.items():
        target = renamed.get(key, key)
        if target not in allowed:
            raise ConfigError(f"unknown config key {name}.{key}")
        if target in renamed.values():
            value = math.radians(value)
        if name == "ray_fan" and target == "radius" and value is None:
            value = math.inf
        if isinstance(value, list):
            value = tuple(value)
        kwargs[target] = value
    return kwargs


def config_from_dict(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in dataclasses.fields(PipelineConfig)}
    kwargs = {}
    try:
        for key, value in doc.items():
            if key not in top:
                raise ConfigError(f"unknown config key {key!r}")
            if key in _SECTIONS:
                kwargs[key] = _SECTIONS[key](**_section_from_dict(key, _SECTIONS[key], value))
            else:
                kwargs[key] = value
        cfg = PipelineConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError, GeometryError) as exc:
        raise ConfigError(str(exc)) from exc
    check_config(cfg)
    return cfg


def check_config(cfg: PipelineConfig) -> None:
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if cfg.n_samples < 10 or cfg.model_samples < 10 or cfg.normals_k < 3:
        raise ConfigError("sample counts must be >= 10 and normals_k >= 3")
    if cfg.speed <= 0 or not 0 < cfg.iou_threshold < 1:
        raise ConfigError("speed must be positive and iou_threshold in (0, 1)")
    s = cfg.scene
    if s.capture_grid_spacing <= 0 or s.depth_noise_sigma < 0 or min(s.grid_extent) <= 0:
        raise ConfigError("scene grid spacing/extent must be positive and noise >= 0")
    if s.pose is not None and len(s.pose) != 12:
        raise ConfigError("scene.pose needs 12 row-major numbers")
    d = cfg.defects
    if d.count < 0 or d.dust_count < 0 or d.radius <= 0 or (d.dust_radius is not None and d.dust_radius <= 0):
        raise ConfigError("defect counts must be >= 0 and radii > 0")


def load_config(path=None, **overrides) -> PipelineConfig:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg = config_from_dict(doc)
    return apply_overrides(cfg, **overrides)


def apply_overrides(cfg: PipelineConfig, seed=None, gamma_deg=None, beta_deg=None, area_threshold=None,
                    mesh=None) -> PipelineConfig:
    doc = config_to_dict(cfg)
    if seed is not None:
        doc["seed"] = seed
    if gamma_deg is not None:
        doc["segmentation"]["gamma_deg"] = gamma_deg
    if beta_deg is not None:
        doc["camera"]["beta_deg"] = beta_deg
    if area_threshold is not None:
        doc["detect"]["area_threshold"] = area_threshold
    if mesh is not None:
        doc["mesh"] = str(mesh)
    return config_from_dict(doc)


def config_sha256(cfg: PipelineConfig) -> str:
    return hashlib.sha256(json.dumps(config_to_dict(cfg), sort_keys=True).encode()).hexdigest()


# -- artifact bookkeeping ---------------------------------------------------------

class Run:
    """Output directory plus the files written by the stage in progress."""

    def __init__(self, cfg: PipelineConfig, out_dir, figures: bool = True, log=print):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.figures = figures
        self.log = log
        self.written: list[Path] = []
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out / name

    def need(self, stage: str, *names: str) -> list[Path]:
        paths = [self.path(n) for n in names]
        missing = [n for n, p in zip(names, paths) if not p.exists()]
        if missing:
            raise StageError(stage, "missing input " + ", ".join(missing))
        return paths

    def _track(self, p: Path) -> Path:
        p.parent.mkdir(parents=True, exist_ok=True)
        stale = p.with_name(p.name + ".failed")
        if stale.exists():
            stale.unlink()
        self.written.append(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self._track(self.path(name))
        p.write_text(text, encoding="utf-8")
        return p

    def write_json(self, name: str, doc) -> Path:
        return self.write_text(name, dumps(doc))

    def write_with(self, name: str, writer, *args, **kwargs) -> Path:
        p = self._track(self.path(name))
        writer(p, *args, **kwargs)
        return p

    def figure(self, name: str, plot, *args, **kwargs):
        if self.figures:
            self.write_with(f"figures/{name}", lambda p: plot(*args, p, **kwargs))

    def fail(self):
        for p in self.written:
            if p.exists():
                p.replace(p.with_name(p.name + ".failed"))
        self.written = []

    def record(self, stage: str):
        """Add this stage's artifacts (with hashes) to the run manifest."""
        mpath = self.path(MANIFEST)
        doc = json.loads(mpath.read_text()) if mpath.exists() else {}
        if doc.get("config_sha256") != config_sha256(self.cfg):
            doc = {}
        doc.update({
            "schema": "specscan.manifest/1",
            "config_sha256": config_sha256(self.cfg),
            "seed": self.cfg.seed,
            "derived_seeds": self.cfg.seeds(),
            "versions": {"specscan": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
        })
        stages = doc.setdefault("stages", {})
        stages[stage] = {str(p.relative_to(self.out)): hashlib.sha256(p.read_bytes()).hexdigest()
                         for p in sorted(set(self.written))}
        mpath.write_text(dumps(doc), encoding="utf-8")
        self.written = []


def run_stage(run: Run, stage: str, fn):
    """Run one stage; on failure its partial artifacts get a ``.failed`` suffix."""
    run.written = []
    try:
        result = fn(run)
    except StageError:
        run.fail()
        raise
    except (GeometryError, PlanningError, SegmentationError, RegistrationError, SimulationError,
            MeshParseError, ValueError) as exc:
        run.fail()
        raise StageError(stage, str(exc)) from exc
    run.record(stage)
    return result


# -- helpers ----------------------------------------------------------------------

def bundled_mesh_path() -> Path:
    return Path(str(resources.files("specscan") / "data" / "mirror.obj"))


def _mesh(cfg: PipelineConfig, stage: str):
    path = Path(cfg.mesh) if cfg.mesh else bundled_mesh_path()
    if not path.exists():
        raise StageError(stage, f"missing input mesh {path}")
    return load_mesh(path)


def _matrix_rows(T: RigidTransform) -> list[float]:
    return [float(x) for x in T.matrix[:3, :4].ravel()]


def _plot(name):
    from . import plotting
    return getattr(plotting, name)


def _cloud_with_normals(run: Run, stage: str) -> PointCloud:
    (p,) = run.need(stage, "exterior.ply")
    cloud, _ = read_ply_cloud(p)
    if cloud.normals is None:
        raise StageError(stage, "exterior.ply has no normals")
    return cloud


# -- stages -----------------------------------------------------------------------

def stage_sample(run: Run) -> dict:
    cfg = run.cfg
    mesh = _mesh(cfg, "sample")
    cloud = sample_mesh(mesh, cfg.n_samples, seed=cfg.seeds()["sample"])
    ext = estimate_normals(filter_exterior(cloud, cfg.ray_fan), k=cfg.normals_k)
    run.write_with("cloud.ply", write_ply, cloud)
    run.write_with("exterior.ply", write_ply, ext)
    return {"samples": len(cloud), "exterior": len(ext)}


def stage_segment(run: Run) -> dict:
    cfg = run.cfg
    cloud = _cloud_with_normals(run, "segment")
    scfg = dataclasses.replace(cfg.segmentation, seed=cfg.seeds()["segmentation"])
    try:
        seg = kmeans_segment(cloud, scfg)
    except SegmentationError as exc:
        if exc.best is not None:
            run.write_json("segments.json", _segments_json(exc.best, scfg))
        raise StageError("segment", str(exc)) from exc
    run.write_json("segments.json", _segments_json(seg, scfg))
    colors = np.full((len(cloud), 3), 128, dtype=np.uint8)
    ok = seg.labels >= 0
    colors[ok] = region_colors(len(seg.regions))[seg.labels[ok]]
    run.write_with("segments.ply", write_ply, cloud, colors)
    run.figure("segmentation.png", _plot("plot_segmentation"), cloud.points, seg.labels)
    return {"regions": len(seg.regions), "max_angle_deg": math.degrees(seg.max_angle)}


def _segments_json(seg, scfg) -> dict:
    return {
        "schema": "specscan.segments/1",
        "gamma_deg": math.degrees(scfg.gamma),
        "final_K": int(seg.final_K),
        "sigma_history": [int(s) for s in seg.sigma_history],
        "at_fixpoint": bool(seg.at_fixpoint),
        "labels": [int(x) for x in seg.labels],
        "regions": [{"region_id": i, "size": int(len(r.point_indices)),
                     "avg_normal": [float(x) for x in r.avg_normal],
                     "max_angle_deg": math.degrees(r.max_angle)} for i, r in enumerate(seg.regions)],
    }


def _load_segmentation(doc: dict):
    from .segmentation import Region, SegmentationResult
    labels = np.asarray(doc["labels"], dtype=np.int64)
    regions = [Region(np.flatnonzero(labels == i), np.asarray(r["avg_normal"], float),
                      math.radians(r["max_angle_deg"])) for i, r in enumerate(doc["regions"])]
    return SegmentationResult(regions, doc["final_K"], doc["sigma_history"], labels, doc["at_fixpoint"])


def stage_plan(run: Run) -> dict:
    cfg = run.cfg
    cloud = _cloud_with_normals(run, "plan")
    (sp,) = run.need("plan", "segments.json")
    seg = _load_segmentation(json.loads(sp.read_text()))
    path, plans = plan_path(cloud, seg, cfg.camera)
    violations = 0
    for plan in plans:
        for patch, pair in zip(plan.patches, plan.pairs):
            violations += len(validate_completeness(patch, pair, cfg.camera, plan.frame).violations)
    run.write_json("scan_path.json", scan_path_to_json(path))
    report = {"schema": "specscan.plan_report/1", "regions": len(plans), "patches": len(path.pairs),
              "cube_violations": int(violations),
              "per_region": [{"region_id": p.region_id, "k": p.k, "omega": p.omega} for p in plans]}
    run.write_json("plan_report.json", report)
    if violations:
        raise StageError("plan", f"{violations} patch points fall outside their camera cube")
    run.figure("scan_path.png", _plot("plot_scan_path"), cloud.points, path,
               working_distance=cfg.camera.working_distance)
    return {"patches": len(path.pairs), "cube_violations": violations}


def _scene(cfg: PipelineConfig, mesh) -> SceneSpec:
    s, seeds = cfg.scene, cfg.seeds()
    if s.pose is not None:
        pose = transform_from_row_major(s.pose)
    else:
        pose = random_planar_pose(np.random.default_rng(seeds["pose"]), s.max_rotation_deg, s.max_shift)
    bTd = RigidTransform(np.diag([1.0, -1.0, -1.0]), [0.0, 0.0, s.sensor_height])
    return SceneSpec(mesh, pose, bTd=bTd, capture_grid_spacing=s.capture_grid_spacing,
                     grid_extent=tuple(s.grid_extent), depth_noise_sigma=s.depth_noise_sigma, seed=seeds["noise"])


def stage_register(run: Run) -> dict:
    cfg = run.cfg
    mesh = _mesh(cfg, "register")
    (pp,) = run.need("register", "scan_path.json")
    path = scan_path_from_json(json.loads(pp.read_text()))
    scene = _scene(cfg, mesh)
    run.write_json("scene.json", {"schema": "specscan.scene/1", "true_pose": _matrix_rows(scene.true_pose),
                                  "depth_pose": _matrix_rows(scene.bTd),
                                  "plane": [float(x) for x in scene.plane.coefficients],
                                  "capture_grid_spacing": scene.capture_grid_spacing,
                                  "depth_noise_sigma": scene.depth_noise_sigma})
    capture = synth_depth_capture(scene)
    run.write_with("capture.ply", write_ply, capture)
    model = sample_mesh(mesh, cfg.model_samples, seed=cfg.seeds()["model"])
    res = register_object(model, capture, scene.plane, scene.bTd, cfg.icp, boundary=cfg.boundary)
    rot, trans = pose_error(res.transform, scene.true_pose)
    doc = res.to_json()
    doc.update({"rotation_error_deg": rot, "translation_error_mm": trans,
                "rms_history": [float(x) for x in res.rms_history]})
    run.write_json("registration.json", doc)
    poses = path_to_robot_frame(path, res.transform)
    rate = line_rate(cfg.camera.n_pixels, cfg.camera.field_of_view, cfg.speed)
    run.write_json("robot_path.json", robot_path_to_json(path, poses, cfg.speed, rate))
    run.figure("registration.png", _plot("plot_registration"), res.capture_boundary, res.model_boundary,
               scene.plane.basis(), c2c=(res.c2c_mean, res.c2c_std))
    return {"rotation_error_deg": rot, "translation_error_mm": trans, "c2c_mean": res.c2c_mean,
            "icp_iterations": res.iterations}


def _image_name(i: int) -> str:
    return f"images/patch_{i:04d}.pgm"


def stage_scan_sim(run: Run) -> dict:
    cfg = run.cfg
    mesh = _mesh(cfg, "scan-sim")
    cloud = _cloud_with_normals(run, "scan-sim")
    pp, rp, sp = run.need("scan-sim", "scan_path.json", "registration.json", "scene.json")
    path = scan_path_from_json(json.loads(pp.read_text()))
    est = transform_from_row_major(json.loads(rp.read_text())["transform"])
    truth = transform_from_row_major(json.loads(sp.read_text())["true_pose"])
    d = cfg.defects
    defects = generate_defects(path, cloud, cfg.camera, d.count, d.radius, seed=cfg.seeds()["defects"],
                               dust_count=d.dust_count, dust_radius=d.dust_radius)
    defects = DefectSpec([dataclasses.replace(x, contrast=d.contrast) if not x.dust else x
                          for x in defects.defects], defects.seed)
    res = simulate_line_scan(mesh, defects, path, cfg.camera, exterior=cloud,
                             pose_error=truth.inverse() @ est)
    for i, img in enumerate(res.images):
        run.write_with(_image_name(i), insp.write_pgm, img)
    doc = defects.to_json()
    doc["schema"] = "specscan.defects/1"
    doc["truth"] = [{"patch": i, "defect": t.defect_index, "box": t.box.as_list(), "complete": t.complete}
                    for i, ts in enumerate(res.truths) for t in ts]
    run.write_json("defects.json", doc)
    run.write_json("coverage.json", {"schema": "specscan.coverage/1", "coverage": res.coverage,
                                     "covered": res.covered, "exterior_points": res.n_exterior,
                                     "images": [_image_name(i) for i in range(len(res.images))]})
    if res.coverage < 1.0:
        raise StageError("scan-sim", f"coverage {res.coverage:.6f} < 1")
    return {"images": len(res.images), "coverage": res.coverage}


_PATCH_RE = re.compile(r"patch_(\d+)\.pgm$")


def stage_detect(run: Run, images=None) -> dict:
    cfg = run.cfg
    if images is None:
        (cp,) = run.need("detect", "coverage.json")
        names = json.loads(cp.read_text())["images"]
        files = run.need("detect", *names)
    else:
        files = [Path(p) for p in images]
        missing = [str(p) for p in files if not p.exists()]
        if missing:
            raise StageError("detect", "missing input " + ", ".join(missing))
        names = [p.name if not p.is_relative_to(run.out) else str(p.relative_to(run.out)) for p in files]
    entries, all_boxes, imgs = [], [], []
    for name, f in zip(names, files):
        img = insp.read_pgm(f)
        boxes, _ = insp.detect_pipeline(img, cfg.detect)
        m = _PATCH_RE.search(name)
        entries.append({"file": name, "patch": int(m.group(1)) if m else None,
                        "boxes": [b.as_list() for b in boxes]})
        all_boxes.append(boxes)
        imgs.append(img)
    run.write_json("detections.json", {"schema": "specscan.detections/1", "detections": entries})
    if imgs:
        run.figure("detections.png", _plot("plot_detections"), imgs, all_boxes)
    return {"images": len(files), "detections": sum(len(b) for b in all_boxes)}


def _box(row) -> insp.Box:
    return insp.Box(*[int(v) for v in row])


def stage_map(run: Run) -> dict:
    cfg = run.cfg
    cam = cfg.camera
    dp, rp, rr = run.need("map", "detections.json", "robot_path.json", "registration.json")
    dets = json.loads(dp.read_text())["detections"]
    robot = json.loads(rp.read_text())["poses"]
    bTo = transform_from_row_major(json.loads(rr.read_text())["transform"])
    truth_doc = json.loads(run.path("defects.json").read_text()) if run.path("defects.json").exists() else None
    true_pose = None
    if run.path("scene.json").exists():
        true_pose = transform_from_row_major(json.loads(run.path("scene.json").read_text())["true_pose"])

    mapped, per_region, errors = [], {}, []
    for entry in dets:
        k = entry["patch"]
        if k is None or not 0 <= k < len(robot):
            raise StageError("map", f"detection file {entry['file']} has no matching path patch")
        pose = RobotPose.from_vector(robot[k]["start"])
        region = robot[k]["region_id"]
        boxes = [_box(b) for b in entry["boxes"]]
        truths = [t for t in truth_doc["truth"] if t["patch"] == k] if truth_doc else []
        complete = [t for t in truths if t["complete"]]
        ignore = [_box(t["box"]) for t in truths if not t["complete"]]
        matches = dict(insp.match_detections(boxes, [_box(t["box"]) for t in complete], cfg.iou_threshold))
        for i, b in enumerate(boxes):
            loc = map_pixel_to_3d(b.center, cam.pixel_size, cam.working_distance, cam.n_pixels, pose, bTo,
                                  patch_id=robot[k]["patch_id"], region_id=region)
            rec = {"patch": k, "region_id": region, "box": b.as_list(), "pixel": list(loc.pixel),
                   "world": [float(x) for x in loc.world], "object": [float(x) for x in loc.object]}
            if i in matches and true_pose is not None:
                di = complete[matches[i]]["defect"]
                p = true_pose.apply_points(np.asarray(truth_doc["defects"][di]["point"], float))
                rec["truth_defect"] = di
                rec["error_mm"] = float(np.linalg.norm(loc.world - p))
                errors.append(rec["error_mm"])
            mapped.append(rec)
        if truth_doc is not None:
            m = insp.score_detections(boxes, [_box(t["box"]) for t in complete], cfg.iou_threshold, ignore)
            tp, fp, fn = per_region.get(region, (0, 0, 0))
            per_region[region] = (tp + m.TP, fp + m.FP, fn + m.FN)

    run.write_json("defect_map.json", {"schema": "specscan.defect_map/1", "frame": "robot base",
                                       "defects": mapped})
    pts = np.array([r["world"] for r in mapped]).reshape(-1, 3)
    run.write_with("defect_map.ply", write_ply, PointCloud(pts))
    out = {"mapped": len(mapped)}
    if truth_doc is not None:
        rows = [(f"R{r}", insp.metrics_from_counts(*per_region[r])) for r in sorted(per_region)
                if any(per_region[r])]
        total = insp.metrics_from_counts(*[sum(c) for c in zip(*per_region.values())]) if per_region \
            else insp.metrics_from_counts(0, 0, 0)
        rows.append(("total", total))
        run.write_text("metrics.csv", insp.metrics_csv(rows))
        out.update({"TP": total.TP, "FP": total.FP, "FN": total.FN, "precision": total.precision,
                    "recall": total.recall, "f_measure": total.f_measure,
                    "max_map_error_mm": max(errors) if errors else 0.0})
        if true_pose is not None:
            truth_pts = [true_pose.apply_points(np.asarray(d["point"], float))
                         for d in truth_doc["defects"] if not d["dust"]]
            cloud = None
            if run.path("exterior.ply").exists():
                cloud = true_pose.apply_points(read_ply_cloud(run.path("exterior.ply"))[0].points)
            if cloud is not None:
                run.figure("defect_map.png", _plot("plot_defect_map"), cloud, pts, np.array(truth_pts))
    return out


STAGE_FUNCS = {"sample": stage_sample, "segment": stage_segment, "plan": stage_plan, "register": stage_register,
               "scan-sim": stage_scan_sim, "detect": stage_detect, "map": stage_map}


def write_effective_config(run: Run):
    (run.out / "config.json").write_text(dumps(config_to_dict(run.cfg)), encoding="utf-8")


def run_e2e(run: Run) -> dict:
    write_effective_config(run)
    summary = {}
    for name in STAGES:
        summary[name] = run_stage(run, name, STAGE_FUNCS[name])
    return summary


def summary_rows(summary: dict) -> list[tuple[str, str]]:
    def g(stage, key, fmt="{}"):
        v = summary.get(stage, {}).get(key)
        return "-" if v is None else fmt.format(v)

    return [
        ("exterior points", g("sample", "exterior")),
        ("regions", g("segment", "regions")),
        ("max region angle [deg]", g("segment", "max_angle_deg", "{:.2f}")),
        ("patches", g("plan", "patches")),
        ("cube violations", g("plan", "cube_violations")),
        ("coverage", g("scan-sim", "coverage", "{:.4f}")),
        ("registration rotation error [deg]", g("register", "rotation_error_deg", "{:.3f}")),
        ("registration translation error [mm]", g("register", "translation_error_mm", "{:.3f}")),
        ("c2c mean [mm]", g("register", "c2c_mean", "{:.3f}")),
        ("TP / FP / FN", f"{g('map', 'TP')} / {g('map', 'FP')} / {g('map', 'FN')}"),
        ("precision", g("map", "precision", "{:.3f}")),
        ("recall", g("map", "recall", "{:.3f}")),
        ("F-measure", g("map", "f_measure", "{:.3f}")),
        ("max mapping error [mm]", g("map", "max_map_error_mm", "{:.3f}")),
    ]


def format_table(rows) -> str:
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)
