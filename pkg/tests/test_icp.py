import math

import numpy as np
import pytest

from sandpose.detection import Detection
from sandpose.evaluation import pose_error
from sandpose.geometry import (
    PointCloud,
    Pose6D,
    apply_pose,
    compose,
    inverse,
    quat_from_rotvec,
    random_quaternion,
)
from sandpose.icp import IcpConfig, NoCorrespondencesError, icp_align, icp_estimate
from sandpose.meshes import OBJECT_LIBRARY
from sandpose.observation import BoundingBox, DepthImage
from sandpose.renderer import render_depth
from sandpose.sand import EmptyCropsError


def grid_cloud(spacing=0.06, n=5):
    axis = (np.arange(n) - (n - 1) / 2) * spacing
    g = np.stack(np.meshgrid(axis, axis, axis), axis=-1).reshape(-1, 3)
    return PointCloud(g)


def rotation_angle(a: Pose6D, b: Pose6D) -> float:
    rel = compose(inverse(a), b)
    return 2 * math.acos(min(1.0, abs(rel.rotation[0])))


def footprint_box(buf):
    rows, cols = np.nonzero(buf.valid)
    return BoundingBox(cols.min(), rows.min(), cols.max() + 1, rows.max() + 1)


class TestIcpConfig:
    def test_defaults(self):
        cfg = IcpConfig()
        assert cfg.max_iterations == 50 and cfg.cutoff == 0.05

    def test_validation(self):
        with pytest.raises(ValueError):
            IcpConfig(max_iterations=0)
        with pytest.raises(ValueError):
            IcpConfig(cutoff=-1)

    def test_from_dict_unknown_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            IcpConfig.from_dict({"iterations": 5})


class TestIcpAlign:
    def test_self_alignment_is_identity(self):
        cloud = grid_cloud()
        pose, mse = icp_align(cloud, cloud, Pose6D.identity(), IcpConfig())
        assert mse < 1e-20
        assert np.linalg.norm(pose.translation) < 1e-10
        assert abs(abs(pose.rotation[0]) - 1) < 1e-10

    def test_recovers_small_translation_exactly(self):
        src = grid_cloud()
        offset = np.array([0.02, 0.0, 0.0])
        tgt = PointCloud(src.points + offset)
        pose, mse = icp_align(src, tgt, Pose6D.identity(), IcpConfig())
        assert np.abs(pose.translation - offset).max() < 1e-6
        assert mse < 1e-12

    def test_recovers_small_rotation(self):
        src = grid_cloud()
        true = Pose6D([0, 0, 0], quat_from_rotvec([0, 0, math.radians(5)]))
        tgt = PointCloud(apply_pose(true, src.points))
        pose, _ = icp_align(src, tgt, Pose6D.identity(), IcpConfig())
        assert rotation_angle(pose, true) < 1e-4

    def test_no_correspondences_error(self):
        src = grid_cloud()
        tgt = PointCloud(src.points + [10.0, 0, 0])
        with pytest.raises(NoCorrespondencesError):
            icp_align(src, tgt, Pose6D.identity(), IcpConfig())

    def test_empty_cloud_rejected(self):
        empty = PointCloud(np.empty((0, 3)))
        with pytest.raises(ValueError):
            icp_align(empty, grid_cloud(), Pose6D.identity(), IcpConfig())

    def test_mse_nonincreasing_over_iterations(self):
        rng = np.random.default_rng(0)
        src = grid_cloud()
        true = Pose6D([0.01, -0.015, 0.02], quat_from_rotvec([0.05, 0.08, -0.04]))
        tgt = PointCloud(apply_pose(true, src.points) + rng.normal(scale=1e-3, size=(len(src), 3)))
        series = []
        for k in range(1, 9):
            _, mse = icp_align(src, tgt, Pose6D.identity(), IcpConfig(max_iterations=k, convergence=1e-15))
            series.append(mse)
        assert all(b <= a + 1e-12 for a, b in zip(series, series[1:]))

    def test_invariant_under_common_rigid_transform(self):
        rng = np.random.default_rng(1)
        src = grid_cloud()
        true = Pose6D([0.012, 0.008, -0.01], quat_from_rotvec([0.03, -0.02, 0.05]))
        tgt = PointCloud(apply_pose(true, src.points))
        init = Pose6D([0.005, 0, 0], [1, 0, 0, 0])
        base, _ = icp_align(src, tgt, init, IcpConfig())
        g = Pose6D(rng.normal(scale=0.3, size=3), random_quaternion(rng))
        moved, _ = icp_align(
            PointCloud(apply_pose(g, src.points)),
            PointCloud(apply_pose(g, tgt.points)),
            compose(compose(g, init), inverse(g)),
            IcpConfig(),
        )
        conjugated = compose(compose(g, base), inverse(g))
        assert np.abs(moved.translation - conjugated.translation).max() < 1e-6
        assert rotation_angle(moved, conjugated) < 1e-6


def tabletop_fixture(name, tip=None):
    """Noiseless tabletop observation of one object at world yaw zero."""
    from sandpose._kernels import INVALID_DEPTH, NEAR_PLANE, _render_into
    from sandpose.geometry import quat_multiply, quat_to_matrix
    from sandpose.harness import _support_plane_mesh, camera_extrinsics, default_camera

    cam = default_camera()
    t_cam = camera_extrinsics()
    mesh = OBJECT_LIBRARY[name]
    rot = np.array([1.0, 0.0, 0.0, 0.0])
    if tip is not None:
        rot = quat_multiply(rot, quat_from_rotvec(tip))
    R = quat_to_matrix(rot)
    z = -float((mesh.vertices @ R.T)[:, 2].min())
    truth = compose(t_cam, Pose6D([0.0, 0.0, z], rot))
    depth = np.full((cam.height, cam.width), INVALID_DEPTH)
    for m, pose in ((_support_plane_mesh(), compose(t_cam, Pose6D.identity())), (mesh, truth)):
        _render_into(
            depth, m.vertices, m.triangles, quat_to_matrix(pose.rotation), pose.translation,
            cam.fx, cam.fy, cam.cx, cam.cy, NEAR_PLANE,
        )
    img = DepthImage(np.where(np.isfinite(depth), depth, 0.0), quantization=0.0)
    det = Detection(name, footprint_box(render_depth(mesh, truth, cam)), 1.0)
    return cam, t_cam, mesh, truth, img, det


class TestIcpEstimate:
    def test_upright_object_matching_zero_init_recovers_pose(self):
        cam, t_cam, mesh, truth, img, det = tabletop_fixture("ramp")
        est = icp_estimate(img, det, mesh, cam, IcpConfig(), init_rotation=t_cam.rotation)
        err = pose_error(est.pose, truth, mesh)
        assert err.add < 0.01
        assert est.mse is not None and est.mse < 1e-4
        assert est.weight == 0.0

    def test_tipped_object_defeats_zero_init(self):
        cam, t_cam, mesh, truth, img, det = tabletop_fixture(
            "stairs", tip=(math.pi / 2, 0.0, 0.0)
        )
        est = icp_estimate(img, det, mesh, cam, IcpConfig(), init_rotation=t_cam.rotation)
        err = pose_error(est.pose, truth, mesh)
        assert err.add > 0.02

    def test_camera_frame_identity_init_is_the_default(self):
        cam, t_cam, mesh, truth, img, det = tabletop_fixture("ramp")
        est = icp_estimate(img, det, mesh, cam, IcpConfig(max_iterations=1))
        # one step from identity orientation stays far from the tilted truth
        err = pose_error(est.pose, truth, mesh)
        assert err.add > 0.01

    def test_empty_crop_error(self, small_cam):
        img = DepthImage(np.zeros((128, 128)), quantization=0.0)
        det = Detection("house", BoundingBox(0, 0, 20, 20), 1.0)
        with pytest.raises(EmptyCropsError):
            icp_estimate(img, det, OBJECT_LIBRARY["house"], small_cam, IcpConfig())
