"""CPU z-buffer depth rasterizer for posed triangle meshes.

Pure functions over immutable inputs: renders are deterministic and safe to
run concurrently as long as each call owns its output buffer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import INVALID_DEPTH, NEAR_PLANE, _count_valid, _render_into
from .geometry import CameraIntrinsics, PointCloud, Pose6D, TriangleMesh, quat_to_matrix

__all__ = [
    "NEAR_PLANE",
    "DepthBuffer",
    "render_depth",
    "buffer_to_cloud",
    "rendered_pixel_count",
    "save_depth_buffer",
]


@dataclass(frozen=True)
class DepthBuffer:
    """Per-pixel camera-frame z in meters; +inf marks pixels with no surface."""

    depth: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("depth buffer must be 2D")
        if np.isnan(d).any():
            raise ValueError("depth buffer contains NaN")
        finite = d[np.isfinite(d)]
        if finite.size and finite.min() <= 0:
            raise ValueError("valid depths must be positive")
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
        return np.isfinite(self.depth)


def render_depth(mesh: TriangleMesh, pose: Pose6D, cam: CameraIntrinsics) -> DepthBuffer:
    """Rasterize `mesh` at `pose`; each pixel keeps the nearest surface z.

    Triangles entirely behind the near plane are dropped; partially-behind
    ones are clipped.  An off-screen object yields an all-invalid buffer.
    """
    depth = np.full((cam.height, cam.width), INVALID_DEPTH)
    _render_into(
        depth,
        mesh.vertices,
        mesh.triangles,
        quat_to_matrix(pose.rotation),
        pose.translation,
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        NEAR_PLANE,
    )
    return DepthBuffer(depth)


def buffer_to_cloud(buf: DepthBuffer, cam: CameraIntrinsics) -> PointCloud:
    """Back-project every valid pixel; (row, col) indices are retained."""
    if (buf.height, buf.width) != (cam.height, cam.width):
        raise ValueError(
            f"buffer is {buf.width}x{buf.height}, intrinsics expect {cam.width}x{cam.height}"
        )
    rows, cols = np.nonzero(buf.valid)
    z = buf.depth[rows, cols]
    x = (cols - cam.cx) / cam.fx * z
    y = (rows - cam.cy) / cam.fy * z
    pts = np.column_stack([x, y, z]) if z.size else np.empty((0, 3))
    px = np.column_stack([rows, cols]) if z.size else np.empty((0, 2), dtype=np.int64)
    return PointCloud(pts, px)


def rendered_pixel_count(buf: DepthBuffer) -> int:
    """Number of pixels with a rendered surface (the weight term N_r)."""
    return int(_count_valid(buf.depth))


def save_depth_buffer(buf: DepthBuffer, path) -> None:
    """Debug export: 16-bit grayscale PNG, millimeters, 0 = invalid."""
    from .observation import write_depth_png

    write_depth_png(path, buf.depth, buf.valid)
