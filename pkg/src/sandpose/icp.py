"""Point-to-point ICP baseline for the second stage.

Classic alternation: nearest-neighbor correspondences within a cutoff, then
a closed-form SVD rigid fit, until the matched-pair MSE stops improving.
The per-object protocol initializes translation at the crop centroid with
identity orientation, which is exactly the bias-prone setup the sampling
filter is compared against.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.spatial import cKDTree

from .detection import Detection
from .geometry import (
    CameraIntrinsics,
    PointCloud,
    Pose6D,
    TriangleMesh,
    apply_pose,
    sample_surface_points,
)
from .observation import DepthImage, crop_and_backproject
from .sand import EmptyCropsError, PoseEstimate, refine_bbox

__all__ = ["IcpConfig", "NoCorrespondencesError", "icp_align", "icp_estimate"]

_MODEL_SAMPLE_SEED = 714  # fixed so the sampled model surface is reproducible
_MODEL_SAMPLE_COUNT = 2048


class NoCorrespondencesError(RuntimeError):
    """No source point finds a target neighbor within the cutoff at init."""


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    cutoff: float = 0.05  # correspondence distance cutoff, meters
    convergence: float = 1e-6  # relative MSE change threshold

    def __post_init__(self):
        object.__setattr__(self, "max_iterations", int(self.max_iterations))
        if self.max_iterations < 1 or self.cutoff <= 0 or self.convergence <= 0:
            raise ValueError("ICP parameters must be positive")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "IcpConfig":
        allowed = {f.name for f in fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _rigid_fit(src: np.ndarray, dst: np.ndarray) -> Pose6D:
    """Least-squares R, t with det(R) = +1 (Kabsch/SVD)."""
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    H = (src - c_src).T @ (dst - c_dst)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return Pose6D.from_rt(R, c_dst - R @ c_src)


def _align(src: np.ndarray, tgt: np.ndarray, init: Pose6D, cfg: IcpConfig):
    tree = cKDTree(tgt)
    pose = init
    mse = np.inf
    prev = np.inf
    converged = False
    iterations = 0
    for it in range(1, cfg.max_iterations + 1):
        moved = apply_pose(pose, src)
        dist, idx = tree.query(moved, distance_upper_bound=cfg.cutoff)
        matched = np.isfinite(dist)
        if not matched.any():
            if it == 1:
                raise NoCorrespondencesError(
                    f"no correspondence within {cfg.cutoff} m at initialization"
                )
            break
        pairs_src = src[matched]
        pairs_dst = tgt[idx[matched]]
        pose = _rigid_fit(pairs_src, pairs_dst)
        resid = apply_pose(pose, pairs_src) - pairs_dst
        mse = float(np.mean(np.einsum("ij,ij->i", resid, resid)))
        iterations = it
        if np.isfinite(prev) and abs(prev - mse) <= cfg.convergence * max(prev, 1e-30):
            converged = True
            break
        prev = mse
    return pose, mse, iterations, converged


def icp_align(
    source: PointCloud, target: PointCloud, init: Pose6D, cfg: IcpConfig
) -> tuple[Pose6D, float]:
    """Align `source` onto `target` starting from `init`.

    Returns the refined pose and the final matched-pair mean squared error.
    """
    if len(source) == 0 or len(target) == 0:
        raise ValueError("ICP needs nonempty source and target clouds")
    pose, mse, _, _ = _align(source.points, target.points, init, cfg)
    return pose, mse


def icp_estimate(
    img: DepthImage,
    det: Detection,
    mesh: TriangleMesh,
    cam: CameraIntrinsics,
    cfg: IcpConfig,
    init_rotation=None,
) -> PoseEstimate:
    """Second-stage baseline for one detection.

    Samples the model surface, initializes at the crop centroid with a
    fixed zero orientation, and runs point-to-point ICP against the crop.
    `init_rotation` expresses that zero orientation in the camera frame
    (identity quaternion when omitted); callers that know the camera tilt
    pass the upright-in-world rotation, which reproduces the classic bias
    toward objects standing in their default orientation.
    """
    target = crop_and_backproject(img, det.box, cam)
    if len(target) == 0:
        raise EmptyCropsError(f"detection box {det.box.as_tuple()} contains no valid depth")
    src = sample_surface_points(mesh, _MODEL_SAMPLE_COUNT, seed=_MODEL_SAMPLE_SEED)
    if init_rotation is None:
        init_rotation = [1.0, 0.0, 0.0, 0.0]
    init = Pose6D(target.points.mean(axis=0), init_rotation)
    pose, mse, iterations, converged = _align(src, target.points, init, cfg)
    return PoseEstimate(
        pose=pose,
        weight=0.0,  # no particle weights in this method; see mse
        refined_box=refine_bbox(pose, mesh, cam),
        converged=converged,
        iterations_run=iterations,
        mse=mse,
    )
