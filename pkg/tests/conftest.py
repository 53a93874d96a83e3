import numpy as np
import pytest

from sandpose.geometry import CameraIntrinsics, Pose6D
from sandpose.meshes import make_box


@pytest.fixture(scope="session")
def small_cam() -> CameraIntrinsics:
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=64.0, cy=64.0, width=128, height=128)


@pytest.fixture(scope="session")
def warm_kernels(small_cam):
    """Compile the numba kernels once so timed tests measure steady state."""
    from sandpose.renderer import render_depth
    from sandpose.sand import SandConfig, SceneContext, Particle, weigh
    from sandpose.geometry import PointCloud

    mesh = make_box(0.1, 0.1, 0.1)
    pose = Pose6D([0.0, 0.0, 0.8], [1.0, 0.0, 0.0, 0.0])
    buf = render_depth(mesh, pose, small_cam)
    crop = PointCloud(np.array([[0.0, 0.0, 0.8]]), np.array([[64, 64]]))
    ctx = SceneContext(crops={0: crop}, scores={0: 1.0})
    weigh(Particle(pose, 0.0, 0), ctx, mesh, small_cam, SandConfig(m=1))
    return buf
