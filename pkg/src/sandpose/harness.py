"""Synthetic cluttered-tabletop scenes with ground truth, and the experiment
runner that compares estimation methods on them.

World frame: z up, support plane at z = 0.  A fixed oblique camera looks
down at the table; every pose handed to estimators or stored as ground
truth is already in the camera frame.  Occlusion is real: all objects and
the plane share one z-buffer.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from ._kernels import INVALID_DEPTH, NEAR_PLANE, _render_into
from .detection import DetectionNoiseConfig, DetectionSet, load_detections, save_detections, synth_detections
from .evaluation import AccuracyCurve, PoseError, accuracy_curve, pose_error
from .geometry import (
    CameraIntrinsics,
    Pose6D,
    TriangleMesh,
    apply_pose,
    compose,
    load_mesh,
    matrix_to_quat,
    quat_from_rotvec,
    quat_to_matrix,
    sample_surface_points,
    save_mesh,
)
from .icp import IcpConfig, icp_estimate
from .meshes import OBJECT_LIBRARY, make_box
from .observation import DepthImage, load_depth, load_intrinsics, save_depth, save_intrinsics
from .renderer import DepthBuffer
from .sand import PoseEstimate, SandConfig, run_sand

__all__ = [
    "PlacementError",
    "PlacedObject",
    "SceneSpec",
    "SceneGroundTruth",
    "SceneBundle",
    "EstimateRecord",
    "ExperimentReport",
    "default_camera",
    "camera_extrinsics",
    "generate_scene",
    "check_interpenetration",
    "save_scene",
    "load_scene",
    "run_experiment",
]

PLANE_SIDE = 0.55  # meters; a desk that does not fill the camera frame
_SCENE_SALT = 0x5CE11E


class PlacementError(RuntimeError):
    """Could not place all objects without overlap within the attempt budget."""


@dataclass(frozen=True)
class PlacedObject:
    class_id: str
    mesh: TriangleMesh
    pose: Pose6D  # camera frame


@dataclass(frozen=True)
class SceneGroundTruth:
    """One synthetic observation plus everything needed to score it."""

    objects: tuple[PlacedObject, ...]
    camera: CameraIntrinsics
    depth: DepthImage  # observed: sensor noise, dropout, mm quantization
    clean_depth: DepthBuffer  # noiseless full-precision composite
    sigma_depth: float
    dropout: float
    seed: int

    @property
    def scene_id(self) -> str:
        return f"scene_{self.seed:04d}"


def default_camera() -> CameraIntrinsics:
    return CameraIntrinsics(fx=140.0, fy=140.0, cx=63.5, cy=63.5, width=128, height=128)


def camera_extrinsics(
    position=(0.0, -0.50, 0.62), look_at=(0.0, 0.02, 0.0)
) -> Pose6D:
    """World-to-camera transform for an oblique tabletop view."""
    c = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(look_at, dtype=np.float64) - c
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    R_wc = np.column_stack([right, down, fwd])  # camera axes in world coords
    R_cw = R_wc.T
    return Pose6D.from_rt(R_cw, -R_cw @ c)


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for generate_scene; every field has a desk-scale default."""

    classes: tuple[str, ...] = tuple(sorted(OBJECT_LIBRARY))
    object_count: tuple[int, int] = (3, 6)  # inclusive range; use (k, k) for exact
    camera: CameraIntrinsics = field(default_factory=default_camera)
    sigma_depth: float = 0.003
    dropout: float = 0.02
    tip_prob: float = 0.0
    support_plane: bool = True
    plane_side: float = PLANE_SIDE
    placement_radius: float = 0.17
    min_separation: float = 0.01
    detection: DetectionNoiseConfig = field(default_factory=DetectionNoiseConfig)

    def __post_init__(self):
        if isinstance(self.object_count, int):
            object.__setattr__(self, "object_count", (self.object_count, self.object_count))
        lo, hi = self.object_count
        if not (0 <= lo <= hi <= len(self.classes)):
            raise ValueError("object_count range must fit inside the class list")
        if not (0.0 <= self.tip_prob <= 1.0):
            raise ValueError("tip_prob must be a probability")
        if self.sigma_depth < 0 or not (0.0 <= self.dropout < 1.0):
            raise ValueError("bad depth noise parameters")

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "object_count": list(self.object_count),
            "camera": self.camera.to_dict(),
            "sigma_depth": self.sigma_depth,
            "dropout": self.dropout,
            "tip_prob": self.tip_prob,
            "support_plane": self.support_plane,
            "plane_side": self.plane_side,
            "placement_radius": self.placement_radius,
            "min_separation": self.min_separation,
            "detection": {
                f.name: getattr(self.detection, f.name) for f in fields(DetectionNoiseConfig)
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        allowed = {f.name for f in fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown scene spec keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "classes" in kwargs:
            kwargs["classes"] = tuple(kwargs["classes"])
            missing = set(kwargs["classes"]) - set(OBJECT_LIBRARY)
            if missing:
                raise ValueError(f"unknown object classes: {sorted(missing)}")
        if "object_count" in kwargs:
            oc = kwargs["object_count"]
            kwargs["object_count"] = (oc, oc) if isinstance(oc, int) else tuple(oc)
        if "camera" in kwargs:
            kwargs["camera"] = CameraIntrinsics.from_dict(kwargs["camera"])
        if "detection" in kwargs:
            kwargs["detection"] = DetectionNoiseConfig.from_dict(kwargs["detection"])
        return cls(**kwargs)


_TIP_ROTVECS = [
    (math.pi / 2, 0.0, 0.0),
    (-math.pi / 2, 0.0, 0.0),
    (0.0, math.pi / 2, 0.0),
    (0.0, -math.pi / 2, 0.0),
]


def _support_plane_mesh(side: float = PLANE_SIDE) -> TriangleMesh:
    plane = make_box(side, side, 0.02)
    return TriangleMesh(plane.vertices - [0, 0, 0.01], plane.triangles)  # top face at z=0


def _render_world_mesh(depth: np.ndarray, mesh: TriangleMesh, pose_cam: Pose6D, cam) -> None:
    _render_into(
        depth,
        mesh.vertices,
        mesh.triangles,
        quat_to_matrix(pose_cam.rotation),
        pose_cam.translation,
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        NEAR_PLANE,
    )


def generate_scene(spec: SceneSpec, seed: int) -> SceneGroundTruth:
    """Place objects on the plane, render the composite, apply sensor noise.

    Placement rejection-samples non-overlapping positions (conservative
    bounding-circle test in the plane) with random yaw and optional
    tip-over; each object rests exactly on the plane.  Deterministic given
    the seed.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _SCENE_SALT]))
    lo, hi = spec.object_count
    k = int(rng.integers(lo, hi + 1)) if hi > lo else lo
    order = rng.permutation(len(spec.classes))[:k]
    chosen = [spec.classes[i] for i in order]

    placed: list[tuple[str, TriangleMesh, Pose6D, float, np.ndarray]] = []
    for cls in chosen:
        mesh = OBJECT_LIBRARY[cls]
        ok = False
        for _ in range(200):
            yaw = rng.uniform(0.0, 2.0 * math.pi)
            rot = quat_from_rotvec([0.0, 0.0, yaw])
            if spec.tip_prob > 0 and rng.random() < spec.tip_prob:
                tip = quat_from_rotvec(_TIP_ROTVECS[int(rng.integers(4))])
                rot = _quat_product(rot, tip)
            R = quat_to_matrix(rot)
            rotated = mesh.vertices @ R.T
            radius = float(np.linalg.norm(rotated[:, :2], axis=1).max())
            xy = rng.uniform(-spec.placement_radius, spec.placement_radius, size=2)
            if np.linalg.norm(xy) > spec.placement_radius:
                continue
            clear = all(
                np.linalg.norm(xy - other_xy) >= radius + other_r + spec.min_separation
                for (_, _, _, other_r, other_xy) in placed
            )
            if not clear:
                continue
            z = -float(rotated[:, 2].min())  # rest on the plane
            pose_world = Pose6D([xy[0], xy[1], z], rot)
            placed.append((cls, mesh, pose_world, radius, xy))
            ok = True
            break
        if not ok:
            raise PlacementError(
                f"could not place {cls!r} after 200 attempts (seed {seed}, k={k})"
            )

    t_cam = camera_extrinsics()
    objects = tuple(
        PlacedObject(cls, mesh, compose(t_cam, pose_world))
        for (cls, mesh, pose_world, _, _) in placed
    )

    depth = np.full((spec.camera.height, spec.camera.width), INVALID_DEPTH)
    if spec.support_plane:
        plane_pose = compose(t_cam, Pose6D.identity())
        _render_world_mesh(depth, _support_plane_mesh(spec.plane_side), plane_pose, spec.camera)
    for obj in objects:
        _render_world_mesh(depth, obj.mesh, obj.pose, spec.camera)
    clean = DepthBuffer(depth.copy())

    observed = np.where(np.isfinite(depth), depth, 0.0)
    valid = observed > 0
    if spec.sigma_depth > 0:
        noise = rng.normal(0.0, spec.sigma_depth, size=observed.shape)
        observed = np.where(valid, np.maximum(observed + noise, 0.001), 0.0)
    if spec.dropout > 0:
        drop = rng.random(observed.shape) < spec.dropout
        observed = np.where(drop, 0.0, observed)
    observed = np.round(observed * 1000.0) / 1000.0  # millimeter sensor quantization
    return SceneGroundTruth(
        objects=objects,
        camera=spec.camera,
        depth=DepthImage(observed, quantization=0.001),
        clean_depth=clean,
        sigma_depth=spec.sigma_depth,
        dropout=spec.dropout,
        seed=int(seed),
    )


def _quat_product(a, b):
    from .geometry import quat_multiply

    return quat_multiply(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def check_interpenetration(gt: SceneGroundTruth, tolerance: float = 1e-4) -> list[tuple[int, int]]:
    """Mesh-distance oracle: pairs whose surfaces cross into each other.

    A pair violates if sampled surface points of one object lie strictly
    inside the convex hull of the other by more than `tolerance`.
    Conservative for the convex-dominated fixture library.
    """
    clouds = []
    hulls = []
    for obj in gt.objects:
        pts = apply_pose(obj.pose, sample_surface_points(obj.mesh, 512, seed=1))
        clouds.append(pts)
        hulls.append(ConvexHull(apply_pose(obj.pose, obj.mesh.vertices)))
    bad = []
    for i in range(len(clouds)):
        for j in range(len(clouds)):
            if i == j:
                continue
            eq = hulls[j].equations  # rows: (normal, offset), inside where n.x + d <= 0
            depth_in = eq[:, :3] @ clouds[i].T + eq[:, 3:4]
            if np.any(depth_in.max(axis=0) < -tolerance):
                pair = (min(i, j), max(i, j))
                if pair not in bad:
                    bad.append(pair)
    return bad


# ---------------------------------------------------------------------------
# scene bundles on disk


@dataclass(frozen=True)
class SceneBundle:
    """A scene as loaded back from disk (no clean composite)."""

    camera: CameraIntrinsics
    depth: DepthImage
    detections: DetectionSet | None
    objects: tuple[PlacedObject, ...]
    seed: int
    sigma_depth: float
    dropout: float


def save_scene(gt: SceneGroundTruth, out_dir, detections: DetectionSet | None = None) -> None:
    out = Path(out_dir)
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    save_depth(gt.depth, out / "depth.png")
    save_intrinsics(gt.camera, out / "intrinsics.json")
    objects = []
    for obj in gt.objects:
        mesh_file = f"meshes/{obj.class_id}.obj"
        save_mesh(obj.mesh, out / mesh_file)
        objects.append(
            {
                "class": obj.class_id,
                "mesh": mesh_file,
                "symmetric": obj.mesh.symmetric,
                "translation": [float(v) for v in obj.pose.translation],
                "quaternion": [float(v) for v in obj.pose.rotation],
            }
        )
    truth = {
        "seed": gt.seed,
        "sigma_depth": gt.sigma_depth,
        "dropout": gt.dropout,
        "objects": objects,
    }
    with open(out / "ground_truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2)
        fh.write("\n")
    if detections is not None:
        save_detections(detections, out / "detections.json")


def load_scene(scene_dir) -> SceneBundle:
    d = Path(scene_dir)
    cam = load_intrinsics(d / "intrinsics.json")
    depth = load_depth(d / "depth.png", cam)
    with open(d / "ground_truth.json", "r", encoding="utf-8") as fh:
        truth = json.load(fh)
    objects = tuple(
        PlacedObject(
            o["class"],
            load_mesh(d / o["mesh"], symmetric=bool(o.get("symmetric", False))),
            Pose6D(o["translation"], o["quaternion"]),
        )
        for o in truth["objects"]
    )
    det_file = d / "detections.json"
    dets = load_detections(det_file, (cam.width, cam.height)) if det_file.exists() else None
    return SceneBundle(
        camera=cam,
        depth=depth,
        detections=dets,
        objects=objects,
        seed=int(truth["seed"]),
        sigma_depth=float(truth["sigma_depth"]),
        dropout=float(truth["dropout"]),
    )


# ---------------------------------------------------------------------------
# experiment runner


@dataclass(frozen=True)
class EstimateRecord:
    scene_id: str
    method: str
    class_id: str
    estimate: PoseEstimate | None
    error: PoseError | None
    failure: str | None = None


@dataclass
class ExperimentReport:
    """Everything a comparison run produced, traceable per (scene, method)."""

    records: list[EstimateRecord]
    config: dict
    seeds: list[int]
    wall_clock: dict[str, float]

    def errors_for(self, method: str) -> list[PoseError]:
        out = []
        for r in self.records:
            if r.method != method:
                continue
            out.append(r.error if r.error is not None else PoseError.failure(r.class_id, r.scene_id))
        return out

    def curve(self, method: str, thresholds) -> AccuracyCurve:
        return accuracy_curve(self.errors_for(method), thresholds)

    def accuracy_at(self, method: str, threshold: float) -> float:
        return self.curve(method, [threshold]).accuracy[0]


_RECOVERABLE = (Exception,)


def run_experiment(
    scenes,
    methods=("sand", "icp"),
    sand_cfg: SandConfig | None = None,
    icp_cfg: IcpConfig | None = None,
    det_noise: DetectionNoiseConfig | None = None,
) -> ExperimentReport:
    """Estimate every present class in every scene with every method.

    Detections are synthesized per scene from its own seed, so the whole
    report is a pure function of (scenes, configs).  Per-estimate failures
    are recorded, not fatal.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValueError("run_experiment needs at least one scene")
    sand_cfg = sand_cfg or SandConfig()
    icp_cfg = icp_cfg or IcpConfig()
    det_noise = det_noise or DetectionNoiseConfig()
    records: list[EstimateRecord] = []
    wall: dict[str, float] = {m: 0.0 for m in methods}
    for gt in scenes:
        dets = synth_detections(gt, det_noise, seed=gt.seed)
        for method in methods:
            t0 = time.perf_counter()
            for obj in gt.objects:
                est, error, failure = None, None, None
                try:
                    if method == "sand":
                        est = run_sand(gt.depth, dets, obj.class_id, obj.mesh, gt.camera, sand_cfg)
                    elif method == "icp":
                        idxs = dets.indices_for_class(obj.class_id)
                        if not idxs:
                            raise ValueError(f"no detections of class {obj.class_id!r}")
                        best = max(idxs, key=lambda i: (dets[i].score, -i))
                        # zero orientation in the world frame (upright on the
                        # table), expressed in the camera frame of these scenes
                        est = icp_estimate(
                            gt.depth,
                            dets[best],
                            obj.mesh,
                            gt.camera,
                            icp_cfg,
                            init_rotation=camera_extrinsics().rotation,
                        )
                    else:
                        raise ValueError(f"unknown method {method!r}")
                    error = pose_error(
                        est.pose, obj.pose, obj.mesh, class_id=obj.class_id, scene_id=gt.scene_id
                    )
                except _RECOVERABLE as exc:  # noqa: BLE001 - per-scene failures are data
                    failure = f"{type(exc).__name__}: {exc}"
                records.append(
                    EstimateRecord(gt.scene_id, method, obj.class_id, est, error, failure)
                )
            wall[method] += time.perf_counter() - t0
    return ExperimentReport(
        records=records,
        config={
            "sand": sand_cfg.to_dict(),
            "icp": icp_cfg.to_dict(),
            "detection": {f.name: getattr(det_noise, f.name) for f in fields(DetectionNoiseConfig)},
        },
        seeds=[gt.seed for gt in scenes],
        wall_clock=wall,
    )
