"""Pose accuracy metrics: mean model-point distance and accuracy curves.

The matched-point mean (add) compares each model point under the two poses;
the closest-point mean (adds) forgives symmetric ambiguity and is the
headline number for meshes flagged symmetric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose6D, TriangleMesh, apply_pose, sample_surface_points

__all__ = [
    "MODEL_POINT_BUDGET",
    "PoseError",
    "AccuracyCurve",
    "model_points",
    "pose_error",
    "accuracy_curve",
    "write_curve_csv",
    "read_curve_csv",
]

MODEL_POINT_BUDGET = 2048
_SAMPLE_SEED = 99


@dataclass(frozen=True)
class PoseError:
    """Per-estimate error; `headline` is adds for symmetric meshes, else add."""

    add: float
    adds: float
    headline: float
    class_id: str = ""
    scene_id: str = ""

    def __post_init__(self):
        if np.isnan(self.add) or np.isnan(self.adds):
            raise ValueError("pose error cannot be NaN")
        if self.add < 0 or self.adds < 0:
            raise ValueError("pose error must be >= 0")
        if self.adds > self.add + 1e-12:
            raise ValueError("closest-point error cannot exceed matched-point error")

    @classmethod
    def failure(cls, class_id: str = "", scene_id: str = "") -> "PoseError":
        """Sentinel for a failed estimate: worse than every finite threshold."""
        return cls(np.inf, np.inf, np.inf, class_id, scene_id)


@dataclass(frozen=True)
class AccuracyCurve:
    thresholds: tuple[float, ...]
    accuracy: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(x) for x in self.thresholds)
        a = tuple(float(x) for x in self.accuracy)
        if len(t) != len(a):
            raise ValueError("thresholds and accuracy must have equal length")
        if any(x2 <= x1 for x1, x2 in zip(t, t[1:])):
            raise ValueError("thresholds must be strictly ascending")
        if any(not (0.0 <= x <= 1.0) for x in a):
            raise ValueError("accuracy values must lie in [0, 1]")
        if any(a2 < a1 for a1, a2 in zip(a, a[1:])):
            raise ValueError("accuracy must be nondecreasing in the threshold")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "accuracy", a)

    def at(self, threshold: float) -> float:
        try:
            return self.accuracy[self.thresholds.index(float(threshold))]
        except ValueError:
            raise KeyError(f"threshold {threshold} not in curve") from None


def model_points(mesh: TriangleMesh) -> np.ndarray:
    """Deterministic metric point set: vertices plus area-weighted samples."""
    verts = mesh.vertices
    if verts.shape[0] >= MODEL_POINT_BUDGET:
        return verts
    extra = sample_surface_points(mesh, MODEL_POINT_BUDGET - verts.shape[0], seed=_SAMPLE_SEED)
    return np.vstack([verts, extra])


def pose_error(
    est: Pose6D,
    truth: Pose6D,
    mesh: TriangleMesh,
    class_id: str = "",
    scene_id: str = "",
) -> PoseError:
    """Mean model-point distance between the two poses (add / adds)."""
    pts = model_points(mesh)
    at_truth = apply_pose(truth, pts)
    at_est = apply_pose(est, pts)
    add = float(np.linalg.norm(at_truth - at_est, axis=1).mean())
    closest, _ = cKDTree(at_est).query(at_truth)
    adds = float(np.mean(closest))
    headline = adds if mesh.symmetric else add
    return PoseError(add=add, adds=adds, headline=headline, class_id=class_id, scene_id=scene_id)


def accuracy_curve(errors, thresholds) -> AccuracyCurve:
    """Fraction of errors whose headline metric beats each threshold."""
    errors = list(errors)
    if not errors:
        raise ValueError("accuracy_curve needs at least one error")
    values = np.array([e.headline for e in errors])
    acc = tuple(float(np.mean(values < t)) for t in thresholds)
    return AccuracyCurve(tuple(thresholds), acc)


def write_curve_csv(curve: AccuracyCurve, path, method: str = "", class_id: str = "*", scenes: int = 0) -> None:
    """Comma-separated (threshold_m, accuracy) rows with a summary header."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# method={method} class={class_id} scenes={scenes}\n")
        writer = csv.writer(fh)
        writer.writerow(["threshold_m", "accuracy"])
        for t, a in zip(curve.thresholds, curve.accuracy):
            writer.writerow([repr(t), repr(a)])


def read_curve_csv(path) -> tuple[AccuracyCurve, dict]:
    meta: dict = {}
    thresholds = []
    accuracy = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if "=" in token:
                        k, v = token.split("=", 1)
                        meta[k] = v
                continue
            if line.startswith("threshold"):
                continue
            t, a = line.split(",")
            thresholds.append(float(t))
            accuracy.append(float(a))
    return AccuracyCurve(tuple(thresholds), tuple(accuracy)), meta
