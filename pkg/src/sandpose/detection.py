"""Stage-1 detection ingestion and the synthetic detection oracle.

This module is the boundary where any real detector plugs in: a detection
file is a JSON list of rows with keys class, x_min, y_min, x_max, y_max,
score.  Rows are never filtered, merged, or thresholded on load; downstream
sampling is what decides which boxes matter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .observation import BoundingBox
from .renderer import render_depth

__all__ = [
    "Detection",
    "DetectionSet",
    "DetectionNoiseConfig",
    "load_detections",
    "save_detections",
    "synth_detections",
]


@dataclass(frozen=True)
class Detection:
    """One scored 2D box for an object class."""

    class_id: str
    box: BoundingBox
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class DetectionSet:
    """All detections for one image, order preserved; dims are optional metadata."""

    detections: tuple[Detection, ...]
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def __getitem__(self, i: int) -> Detection:
        return self.detections[i]

    def indices_for_class(self, class_id: str) -> list[int]:
        return [i for i, d in enumerate(self.detections) if d.class_id == class_id]


@dataclass(frozen=True)
class DetectionNoiseConfig:
    """Noise model for the synthetic detection oracle.

    fp_count spurious boxes are always added; fp_rate adds a further
    Poisson-distributed number.  Spurious boxes are uniform over the image
    with area between the fp_area_range fractions of the frame.
    """

    jitter_sigma_px: float = 0.0
    true_score_range: tuple[float, float] = (1.0, 1.0)
    fn_rate: float = 0.0
    fp_count: int = 0
    fp_rate: float = 0.0
    fp_score_range: tuple[float, float] = (0.5, 0.9)
    fp_area_range: tuple[float, float] = (0.01, 0.25)

    def __post_init__(self):
        if self.jitter_sigma_px < 0 or self.fn_rate < 0 or self.fn_rate > 1:
            raise ValueError("bad detection noise config")
        if self.fp_count < 0 or self.fp_rate < 0:
            raise ValueError("bad false-positive config")

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionNoiseConfig":
        allowed = {
            "jitter_sigma_px",
            "true_score_range",
            "fn_rate",
            "fp_count",
            "fp_rate",
            "fp_score_range",
            "fp_area_range",
        }
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown detection noise keys: {sorted(unknown)}")
        kwargs = dict(d)
        for key in ("true_score_range", "fp_score_range", "fp_area_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def load_detections(path, image_size: tuple[int, int] | None = None) -> DetectionSet:
    """Read a detection file; every row is kept, in file order."""
    with open(path, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    if not isinstance(rows, list):
        raise ValueError(f"{path}: expected a JSON list of detections")
    dets = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            raise ValueError(f"{path}: row {i}: expected an object")
        required = {"class", "x_min", "y_min", "x_max", "y_max", "score"}
        missing = required - set(row)
        if missing:
            raise ValueError(f"{path}: row {i}: missing keys {sorted(missing)}")
        unknown = set(row) - required
        if unknown:
            raise ValueError(f"{path}: row {i}: unknown keys {sorted(unknown)}")
        score = float(row["score"])
        if not (0.0 <= score <= 1.0):
            raise ValueError(f"{path}: row {i}: score {score} outside [0, 1]")
        try:
            box = BoundingBox(row["x_min"], row["y_min"], row["x_max"], row["y_max"])
        except ValueError as e:
            raise ValueError(f"{path}: row {i}: {e}") from None
        dets.append(Detection(str(row["class"]), box, score))
    w, h = image_size if image_size is not None else (None, None)
    return DetectionSet(tuple(dets), w, h)


def save_detections(dets: DetectionSet, path) -> None:
    rows = [
        {
            "class": d.class_id,
            "x_min": d.box.x_min,
            "y_min": d.box.y_min,
            "x_max": d.box.x_max,
            "y_max": d.box.y_max,
            "score": d.score,
        }
        for d in dets
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")


def _visible_box(obj, clean_depth, cam) -> BoundingBox | None:
    """Tight box over the pixels where this object is the nearest surface."""
    solo = render_depth(obj.mesh, obj.pose, cam)
    visible = solo.valid & (solo.depth == clean_depth.depth)
    if not visible.any():
        return None
    rows, cols = np.nonzero(visible)
    return BoundingBox(cols.min(), rows.min(), cols.max() + 1, rows.max() + 1)


def _jittered(box: BoundingBox, sigma: float, rng, width: int, height: int) -> BoundingBox:
    if sigma == 0:
        return box
    j = np.rint(rng.normal(0.0, sigma, size=4)).astype(int)
    x0 = int(np.clip(box.x_min + j[0], 0, width - 1))
    y0 = int(np.clip(box.y_min + j[1], 0, height - 1))
    x1 = int(np.clip(box.x_max + j[2], x0 + 1, width))
    y1 = int(np.clip(box.y_max + j[3], y0 + 1, height))
    return BoundingBox(x0, y0, x1, y1)


def synth_detections(gt, noise: DetectionNoiseConfig, seed: int) -> DetectionSet:
    """Oracle detections for a synthetic scene, standing in for a detector.

    Each visible object contributes the tight box of its rendered visible
    pixels (occlusion-aware), jittered and scored per the noise config;
    fully occluded objects yield nothing.  Deterministic given the seed.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5E7EC7]))
    cam = gt.camera
    dets: list[Detection] = []
    for obj in gt.objects:
        box = _visible_box(obj, gt.clean_depth, cam)
        if box is None:
            continue
        if noise.fn_rate > 0 and rng.random() < noise.fn_rate:
            continue
        box = _jittered(box, noise.jitter_sigma_px, rng, cam.width, cam.height)
        lo, hi = noise.true_score_range
        score = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
        dets.append(Detection(obj.class_id, box, score))
    n_fp = noise.fp_count
    if noise.fp_rate > 0:
        n_fp += int(rng.poisson(noise.fp_rate))
    classes = [obj.class_id for obj in gt.objects]
    for _ in range(n_fp):
        if not classes:
            break
        cls = classes[int(rng.integers(len(classes)))]
        frac = rng.uniform(*noise.fp_area_range)
        area = frac * cam.width * cam.height
        aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
        bw = max(2, min(cam.width, int(round(math.sqrt(area * aspect)))))
        bh = max(2, min(cam.height, int(round(area / bw))))
        x0 = int(rng.integers(0, cam.width - bw + 1))
        y0 = int(rng.integers(0, cam.height - bh + 1))
        lo, hi = noise.fp_score_range
        score = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
        dets.append(Detection(cls, BoundingBox(x0, y0, x0 + bw, y0 + bh), score))
    return DetectionSet(tuple(dets), cam.width, cam.height)
