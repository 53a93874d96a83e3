"""Render-and-compare particle filtering for 6-DoF object pose estimation.

Given scored 2D detections, a depth image, camera intrinsics, and triangle
meshes, the filter searches pose space by rendering hypotheses against the
observed depth and resampling on a three-term match weight.  The package
also ships an ICP baseline, ADD/ADD-S evaluation, and a synthetic tabletop
scene harness with a CLI (`sandpose synth|estimate|eval|compare`).
"""

from .geometry import (
    CameraIntrinsics,
    MeshFormatError,
    PointCloud,
    Pose6D,
    TriangleMesh,
    compose,
    inverse,
    load_mesh,
    sample_surface_points,
    save_mesh,
    transform_points,
)
from .renderer import DepthBuffer, buffer_to_cloud, render_depth, rendered_pixel_count

__version__ = "0.1.0"
