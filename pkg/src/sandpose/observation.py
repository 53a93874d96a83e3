"""Observed depth handling: loading, bounding-box crops, back-projection.

Depth files are 16-bit grayscale PNG, pixel value = millimeters, 0 = invalid.
Intrinsics files are JSON objects with keys fx, fy, cx, cy, width, height.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, PointCloud

__all__ = [
    "MAX_DEPTH",
    "DepthImage",
    "BoundingBox",
    "load_depth",
    "save_depth",
    "write_depth_png",
    "read_depth_png",
    "load_intrinsics",
    "save_intrinsics",
    "crop_and_backproject",
    "observed_count",
]

MAX_DEPTH = 20.0  # meters; beyond this a sensor reading is treated as invalid


@dataclass(frozen=True)
class DepthImage:
    """Dense range map in meters; 0.0 marks invalid pixels.

    `quantization` records the source quantization step in meters
    (1 mm for depth loaded from 16-bit files, 0 for synthetic images).
    """

    depth: np.ndarray
    quantization: float = 0.001

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("depth image must be 2D")
        if not np.all(np.isfinite(d)):
            raise ValueError("depth image has non-finite values")
        if np.any(d < 0) or np.any(d > MAX_DEPTH):
            raise ValueError(f"valid depths must lie in (0, {MAX_DEPTH}] meters")
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0


@dataclass(frozen=True)
class BoundingBox:
    """Pixel box, inclusive-exclusive; may exceed the image until clamped."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def clamp(self, width: int, height: int) -> "BoundingBox":
        """Clip to image bounds; raises if nothing remains."""
        x0 = max(0, self.x_min)
        y0 = max(0, self.y_min)
        x1 = min(width, self.x_max)
        y1 = min(height, self.y_max)
        if x0 >= x1 or y0 >= y1:
            raise ValueError(f"box {self.as_tuple()} lies outside the {width}x{height} image")
        return BoundingBox(x0, y0, x1, y1)

    @property
    def center(self) -> tuple[float, float]:
        # center of the covered pixel grid, integer-centered coordinates
        return ((self.x_min + self.x_max - 1) / 2.0, (self.y_min + self.y_max - 1) / 2.0)


def write_depth_png(path, depth_m: np.ndarray, valid: np.ndarray) -> None:
    """Write meters as 16-bit millimeter PNG; invalid pixels become 0."""
    mm = np.rint(np.where(valid, depth_m, 0.0) * 1000.0)
    mm = np.clip(mm, 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path, format="PNG")


def read_depth_png(path) -> np.ndarray:
    """Read a 16-bit grayscale PNG into a millimeter integer array."""
    img = Image.open(path)
    if img.mode not in ("I;16", "I", "L"):
        raise ValueError(f"{path}: expected 16-bit grayscale depth, got mode {img.mode!r}")
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel depth image")
    return arr.astype(np.int64)


def load_depth(path, cam: CameraIntrinsics) -> DepthImage:
    """Load a millimeter depth file and validate it against the intrinsics."""
    mm = read_depth_png(path)
    if mm.shape != (cam.height, cam.width):
        raise ValueError(
            f"{path}: depth is {mm.shape[1]}x{mm.shape[0]}, "
            f"intrinsics expect {cam.width}x{cam.height}"
        )
    depth = mm.astype(np.float64) / 1000.0
    depth[depth > MAX_DEPTH] = 0.0
    return DepthImage(depth, quantization=0.001)


def save_depth(img: DepthImage, path) -> None:
    write_depth_png(path, img.depth, img.valid)


def load_intrinsics(path) -> CameraIntrinsics:
    with open(path, "r", encoding="utf-8") as fh:
        return CameraIntrinsics.from_dict(json.load(fh))


def save_intrinsics(cam: CameraIntrinsics, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cam.to_dict(), fh, indent=2)
        fh.write("\n")


def crop_and_backproject(img: DepthImage, box: BoundingBox, cam: CameraIntrinsics) -> PointCloud:
    """Back-project the valid pixels inside `box` (clamped to the image).

    Invalid pixels contribute no point, so the cloud size is the observed
    point count N_b.  An all-invalid crop yields an empty cloud.
    """
    if (img.height, img.width) != (cam.height, cam.width):
        raise ValueError(
            f"image is {img.width}x{img.height}, intrinsics expect {cam.width}x{cam.height}"
        )
    b = box.clamp(cam.width, cam.height)
    sub = img.depth[b.y_min : b.y_max, b.x_min : b.x_max]
    rows, cols = np.nonzero(sub > 0)
    if rows.size == 0:
        return PointCloud(np.empty((0, 3)), np.empty((0, 2), dtype=np.int64))
    rows = rows + b.y_min
    cols = cols + b.x_min
    z = img.depth[rows, cols]
    x = (cols - cam.cx) / cam.fx * z
    y = (rows - cam.cy) / cam.fy * z
    return PointCloud(np.column_stack([x, y, z]), np.column_stack([rows, cols]))


def observed_count(cloud: PointCloud) -> int:
    """Number of observed points in a crop (the weight term N_b)."""
    return len(cloud)
