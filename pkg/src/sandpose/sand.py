"""Sampling-filter core: detection-primed pose search by render-and-compare.

Particles are pose hypotheses tied to the detection whose crop scores them.
Each iteration renders every hypothesis, weighs it with the three-term
match weight (crop inlier ratio, scene inlier ratio, detector confidence),
then systematically resamples and perturbs.  The search stops when the
average raw weight clears tau or the iteration budget runs out; the answer
is the max-weight particle of the last scored set.

Randomness contract: every draw comes from a generator seeded by
(config seed, stream) where stream 0 is initialization and stream 1 + k is
the resample step leaving iteration k.  Within a step, noise row i belongs
to particle i, so results are independent of scoring parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Mapping

import numpy as np

from ._kernels import NEAR_PLANE, _count_inliers, _score_batch
from .detection import DetectionSet
from .geometry import CameraIntrinsics, PointCloud, Pose6D, TriangleMesh
from .observation import BoundingBox, DepthImage, crop_and_backproject
from .renderer import DepthBuffer, render_depth

__all__ = [
    "NoDetectionsError",
    "EmptyCropsError",
    "DegenerateWeightsError",
    "OffscreenError",
    "Particle",
    "ParticleSet",
    "SandConfig",
    "PoseEstimate",
    "SceneContext",
    "build_scene_context",
    "init_particles",
    "count_inliers",
    "weigh",
    "score_particles",
    "resample_perturb",
    "run_filter",
    "run_sand",
    "refine_bbox",
]


class NoDetectionsError(ValueError):
    """No usable detection of the requested class."""


class EmptyCropsError(ValueError):
    """Every detection box of the class contains no valid depth."""


class DegenerateWeightsError(RuntimeError):
    """Total particle weight is zero; the scene does not support the class."""


class OffscreenError(ValueError):
    """A pose renders no pixel, so no bounding box can be derived."""


@dataclass(frozen=True)
class Particle:
    """One pose hypothesis with its weight and source-detection index."""

    pose: Pose6D
    weight: float
    source: int

    def __post_init__(self):
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise ValueError(f"weight must be finite and >= 0, got {self.weight}")
        if self.source < 0:
            raise ValueError("source index must be >= 0")


@dataclass(frozen=True)
class ParticleSet:
    """M particles stored as arrays; count is invariant across iterations."""

    translations: np.ndarray  # (M, 3)
    rotations: np.ndarray  # (M, 4) unit quaternions (w, x, y, z)
    weights: np.ndarray  # (M,)
    sources: np.ndarray  # (M,) detection indices
    iteration: int = 0  # resample steps taken so far

    def __post_init__(self):
        t = np.array(self.translations, dtype=np.float64).reshape(-1, 3)
        q = np.array(self.rotations, dtype=np.float64).reshape(-1, 4)
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        s = np.array(self.sources, dtype=np.int64).reshape(-1)
        m = t.shape[0]
        if m < 1 or q.shape[0] != m or w.shape[0] != m or s.shape[0] != m:
            raise ValueError("particle arrays must share one length M >= 1")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(q))):
            raise ValueError("non-finite particle state")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and >= 0")
        if np.any(s < 0):
            raise ValueError("source indices must be >= 0")
        n2 = np.einsum("ij,ij->i", q, q)
        if np.any(n2 < 1e-24):
            raise ValueError("degenerate quaternion in particle set")
        off = np.abs(n2 - 1.0) >= 1e-13
        if off.any():
            q[off] /= np.sqrt(n2[off])[:, None]
        for a in (t, q, w, s):
            a.setflags(write=False)
        object.__setattr__(self, "translations", t)
        object.__setattr__(self, "rotations", q)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "sources", s)

    def __len__(self) -> int:
        return self.translations.shape[0]

    def particle(self, i: int) -> Particle:
        return Particle(
            Pose6D(self.translations[i], self.rotations[i]),
            float(self.weights[i]),
            int(self.sources[i]),
        )

    @property
    def particles(self) -> list[Particle]:
        return [self.particle(i) for i in range(len(self))]

    @classmethod
    def from_particles(cls, particles, iteration: int = 0) -> "ParticleSet":
        return cls(
            np.array([p.pose.translation for p in particles]),
            np.array([p.pose.rotation for p in particles]),
            np.array([p.weight for p in particles]),
            np.array([p.source for p in particles]),
            iteration=iteration,
        )


@dataclass(frozen=True)
class SandConfig:
    """Filter parameters; defaults give 625 samples over up to 200 iterations."""

    m: int = 625
    max_iters: int = 200
    epsilon: float = 0.01  # inlier radius, meters
    alpha: float = 0.4  # crop inlier ratio coefficient
    beta: float = 0.4  # scene inlier ratio coefficient
    gamma: float = 0.2  # detector confidence coefficient
    tau: float = 0.7  # convergence threshold on the average raw weight
    sigma_t: float = 0.02  # translation perturbation std, meters per axis
    sigma_r: float = 0.05  # rotation-vector perturbation std, radians per axis
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "max_iters", int(self.max_iters))
        object.__setattr__(self, "seed", int(self.seed))
        if self.m < 1 or self.max_iters < 1:
            raise ValueError("m and max_iters must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if min(self.alpha, self.beta, self.gamma) < 0 or self.alpha + self.beta + self.gamma <= 0:
            raise ValueError("weight coefficients must be >= 0 with a positive sum")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.sigma_t < 0 or self.sigma_r < 0:
            raise ValueError("perturbation sigmas must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SandConfig":
        allowed = {f.name for f in fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class PoseEstimate:
    """Filter output: best pose, its weight, and the re-rendered box."""

    pose: Pose6D
    weight: float
    refined_box: BoundingBox
    converged: bool
    iterations_run: int
    mse: float | None = None  # set by the ICP baseline only


@dataclass(frozen=True)
class SceneContext:
    """Observed crops and scores per detection index, for one class run."""

    crops: Mapping[int, PointCloud]
    scores: Mapping[int, float]


def build_scene_context(
    dets: DetectionSet, class_id: str, img: DepthImage, cam: CameraIntrinsics
) -> SceneContext:
    """Crop and back-project every detection of the class.

    Boxes with no valid depth (or entirely outside the image) are unusable
    and dropped here; if none survive, the class cannot be estimated.
    """
    idxs = dets.indices_for_class(class_id)
    if not idxs:
        raise NoDetectionsError(f"no detections of class {class_id!r}")
    if sum(dets[i].score for i in idxs) <= 0:
        raise NoDetectionsError(f"total confidence for class {class_id!r} is zero")
    crops: dict[int, PointCloud] = {}
    scores: dict[int, float] = {}
    for i in idxs:
        try:
            cloud = crop_and_backproject(img, dets[i].box, cam)
        except ValueError:
            continue
        if len(cloud) == 0:
            continue
        crops[i] = cloud
        scores[i] = dets[i].score
    if not crops:
        raise EmptyCropsError(f"no valid depth in any detection box of class {class_id!r}")
    if sum(scores.values()) <= 0:
        raise NoDetectionsError(f"usable detections of class {class_id!r} all have zero score")
    return SceneContext(crops=crops, scores=scores)


# ---------------------------------------------------------------------------
# internals shared by the public single-particle ops and the batch loop


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def _matrices_from_quats(q: np.ndarray) -> np.ndarray:
    """Vectorized quaternion-to-matrix; same expressions as quat_to_matrix."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * y * y - 2 * z * z
    R[:, 0, 1] = 2 * x * y - 2 * w * z
    R[:, 0, 2] = 2 * x * z + 2 * w * y
    R[:, 1, 0] = 2 * x * y + 2 * w * z
    R[:, 1, 1] = 1 - 2 * x * x - 2 * z * z
    R[:, 1, 2] = 2 * y * z - 2 * w * x
    R[:, 2, 0] = 2 * x * z - 2 * w * y
    R[:, 2, 1] = 2 * y * z + 2 * w * x
    R[:, 2, 2] = 1 - 2 * x * x - 2 * y * y
    return R


def _quats_from_rotvecs(v: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(v, axis=1)
    q = np.zeros((v.shape[0], 4))
    q[:, 0] = 1.0
    nz = theta >= 1e-12
    half = 0.5 * theta[nz]
    s = np.sin(half) / theta[nz]
    q[nz, 0] = np.cos(half)
    q[nz, 1:] = v[nz] * s[:, None]
    return q


def _quat_mul_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    bw, bx, by, bz = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    return np.column_stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


class _PackedContext:
    """CSR layout of the per-detection crops for the scoring kernel."""

    def __init__(self, ctx: SceneContext):
        det_idx = np.array(sorted(ctx.crops), dtype=np.int64)
        rows, cols, pts = [], [], []
        start = np.zeros(len(det_idx), dtype=np.int64)
        count = np.zeros(len(det_idx), dtype=np.int64)
        at = 0
        for k, i in enumerate(det_idx):
            crop = ctx.crops[int(i)]
            if crop.pixels is None:
                raise ValueError("scene context crops must carry pixel indices")
            rows.append(crop.pixels[:, 0])
            cols.append(crop.pixels[:, 1])
            pts.append(crop.points)
            start[k] = at
            count[k] = len(crop)
            at += len(crop)
        self.det_idx = det_idx
        self.rows = np.ascontiguousarray(np.concatenate(rows))
        self.cols = np.ascontiguousarray(np.concatenate(cols))
        self.pts = np.ascontiguousarray(np.vstack(pts))
        self.start = start
        self.count = count
        self.slot_scores = np.array([ctx.scores[int(i)] for i in det_idx])

    def slots_for(self, sources: np.ndarray) -> np.ndarray:
        slots = np.searchsorted(self.det_idx, sources)
        ok = (slots < len(self.det_idx)) & (self.det_idx[np.minimum(slots, len(self.det_idx) - 1)] == sources)
        if not np.all(ok):
            raise ValueError("particle source index not present in the scene context")
        return slots.astype(np.int64)


def _score_arrays(
    ps: ParticleSet,
    packed: _PackedContext,
    mesh: TriangleMesh,
    cam: CameraIntrinsics,
    cfg: SandConfig,
):
    m = len(ps)
    slots = packed.slots_for(ps.sources)
    det_score = packed.slot_scores[slots]
    out_w = np.empty(m)
    out_n = np.empty(m, dtype=np.int64)
    out_nr = np.empty(m, dtype=np.int64)
    _score_batch(
        mesh.vertices,
        mesh.triangles,
        _matrices_from_quats(ps.rotations),
        np.ascontiguousarray(ps.translations),
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        cam.width,
        cam.height,
        NEAR_PLANE,
        packed.rows,
        packed.cols,
        packed.pts,
        packed.start,
        packed.count,
        slots,
        det_score,
        cfg.epsilon,
        cfg.alpha,
        cfg.beta,
        cfg.gamma,
        out_w,
        out_n,
        out_nr,
    )
    return out_w, out_n, out_nr


# ---------------------------------------------------------------------------
# operations


def init_particles(
    dets: DetectionSet,
    class_id: str,
    img: DepthImage,
    cam: CameraIntrinsics,
    cfg: SandConfig,
) -> ParticleSet:
    """Importance-sample particles over detection confidences.

    Sources are drawn proportionally to the scores, so higher-confidence
    boxes receive more hypotheses.  Translations seed at the back-projected
    box center using the median valid crop depth plus Gaussian noise
    (sigma_t laterally, 2 sigma_t along the ray); orientations are uniform
    over the rotation group.  Weights start at zero until the first scoring
    pass.  Deterministic given cfg.seed.
    """
    ctx = build_scene_context(dets, class_id, img, cam)
    return _init_from_context(dets, ctx, cam, cfg)


def _init_from_context(
    dets: DetectionSet, ctx: SceneContext, cam: CameraIntrinsics, cfg: SandConfig
) -> ParticleSet:
    det_idx = np.array(sorted(ctx.crops), dtype=np.int64)
    scores = np.array([ctx.scores[int(i)] for i in det_idx])
    probs = scores / scores.sum()
    seeds = np.empty((len(det_idx), 3))
    for k, i in enumerate(det_idx):
        crop = ctx.crops[int(i)]
        z = float(np.median(crop.points[:, 2]))
        u, v = dets[int(i)].box.center
        seeds[k] = [(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z]
    rng = _rng(cfg.seed, 0)
    pick = rng.choice(len(det_idx), size=cfg.m, p=probs)
    noise = rng.normal(size=(cfg.m, 3)) * np.array([cfg.sigma_t, cfg.sigma_t, 2 * cfg.sigma_t])
    raw = rng.standard_normal((cfg.m, 4))
    norms = np.linalg.norm(raw, axis=1)
    tiny = norms < 1e-9
    raw[tiny] = [1.0, 0.0, 0.0, 0.0]
    norms[tiny] = 1.0
    return ParticleSet(
        translations=seeds[pick] + noise,
        rotations=raw / norms[:, None],
        weights=np.zeros(cfg.m),
        sources=det_idx[pick],
        iteration=0,
    )


def count_inliers(
    rendered: DepthBuffer,
    observed_crop: PointCloud,
    epsilon: float,
    cam: CameraIntrinsics,
) -> int:
    """Count observed points within epsilon of the rendered point at their pixel.

    Correspondence is strictly per-pixel: a crop point only matches the
    rendered surface at its own (row, col).
    """
    if len(observed_crop) == 0:
        return 0
    if observed_crop.pixels is None:
        raise ValueError("observed crop must carry pixel indices")
    px = observed_crop.pixels
    if px[:, 0].max() >= rendered.height or px[:, 1].max() >= rendered.width:
        raise ValueError("crop pixel indices fall outside the rendered buffer")
    return int(
        _count_inliers(
            rendered.depth,
            np.ascontiguousarray(px[:, 0]),
            np.ascontiguousarray(px[:, 1]),
            np.ascontiguousarray(observed_crop.points),
            cam.fx,
            cam.fy,
            cam.cx,
            cam.cy,
            float(epsilon),
        )
    )


def weigh(
    particle: Particle,
    ctx: SceneContext,
    mesh: TriangleMesh,
    cam: CameraIntrinsics,
    cfg: SandConfig,
) -> float:
    """Three-term weight of one hypothesis against its source crop.

    Renders the mesh full-frame at the particle pose, counts inliers N
    against the source-detection crop, and returns
    alpha * N / N_b + beta * N / N_r + gamma * c (0 if nothing renders).
    """
    if particle.source not in ctx.crops:
        raise ValueError(f"particle source {particle.source} has no crop in the context")
    ps = ParticleSet(
        particle.pose.translation[None, :],
        particle.pose.rotation[None, :],
        np.array([particle.weight]),
        np.array([particle.source]),
    )
    out_w, _, _ = _score_arrays(ps, _PackedContext(ctx), mesh, cam, cfg)
    return float(out_w[0])


def score_particles(
    ps: ParticleSet,
    ctx: SceneContext,
    mesh: TriangleMesh,
    cam: CameraIntrinsics,
    cfg: SandConfig,
) -> ParticleSet:
    """Re-weigh every particle; pure, parallel-safe, scheduling-independent."""
    out_w, _, _ = _score_arrays(ps, _PackedContext(ctx), mesh, cam, cfg)
    return replace(ps, weights=out_w)


def resample_perturb(ps: ParticleSet, cfg: SandConfig) -> ParticleSet:
    """Systematic resampling plus Gaussian pose perturbation.

    Children inherit their parent's pose (perturbed), source, and weight;
    weights are only replaced by the next scoring pass, so resampling never
    manufactures weight.  M is preserved exactly.  Deterministic given
    (cfg.seed, ps.iteration).
    """
    total = float(ps.weights.sum())
    if not total > 0:
        raise DegenerateWeightsError(
            "total particle weight is zero; detections do not match the scene"
        )
    m = len(ps)
    rng = _rng(cfg.seed, 1 + ps.iteration)
    positions = (rng.random() + np.arange(m)) / m
    cum = np.cumsum(ps.weights / total)
    cum[-1] = 1.0
    parents = np.searchsorted(cum, positions, side="right")
    parents = np.minimum(parents, m - 1)
    dt = rng.normal(size=(m, 3)) * cfg.sigma_t
    dr = rng.normal(size=(m, 3)) * cfg.sigma_r
    return ParticleSet(
        translations=ps.translations[parents] + dt,
        rotations=_quat_mul_batch(_quats_from_rotvecs(dr), ps.rotations[parents]),
        weights=ps.weights[parents],
        sources=ps.sources[parents],
        iteration=ps.iteration + 1,
    )


def refine_bbox(pose: Pose6D, mesh: TriangleMesh, cam: CameraIntrinsics) -> BoundingBox:
    """Tight axis-aligned box over the rendered footprint at `pose`."""
    buf = render_depth(mesh, pose, cam)
    rows, cols = np.nonzero(buf.valid)
    if rows.size == 0:
        raise OffscreenError("pose renders no pixels; cannot refine a bounding box")
    return BoundingBox(cols.min(), rows.min(), cols.max() + 1, rows.max() + 1)


def run_filter(
    ps: ParticleSet,
    ctx: SceneContext,
    mesh: TriangleMesh,
    cam: CameraIntrinsics,
    cfg: SandConfig,
) -> PoseEstimate:
    """Iterate score / convergence check / resample from a given particle set."""
    packed = _PackedContext(ctx)
    converged = False
    iterations = 0
    for step in range(cfg.max_iters):
        out_w, _, _ = _score_arrays(ps, packed, mesh, cam, cfg)
        ps = replace(ps, weights=out_w)
        iterations = step + 1
        if float(out_w.mean()) >= cfg.tau:
            converged = True
            break
        if step + 1 < cfg.max_iters:
            ps = resample_perturb(ps, cfg)
    best = int(np.argmax(ps.weights))  # first index wins ties
    pose = Pose6D(ps.translations[best], ps.rotations[best])
    return PoseEstimate(
        pose=pose,
        weight=float(ps.weights[best]),
        refined_box=refine_bbox(pose, mesh, cam),
        converged=converged,
        iterations_run=iterations,
    )


def run_sand(
    img: DepthImage,
    dets: DetectionSet,
    class_id: str,
    mesh: TriangleMesh,
    cam: CameraIntrinsics,
    cfg: SandConfig,
) -> PoseEstimate:
    """Full second-stage run for one class: init, iterate, extract the best pose."""
    ctx = build_scene_context(dets, class_id, img, cam)
    ps = _init_from_context(dets, ctx, cam, cfg)
    return run_filter(ps, ctx, mesh, cam, cfg)
