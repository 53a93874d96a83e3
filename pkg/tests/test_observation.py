import numpy as np
import pytest
from PIL import Image

from sandpose.geometry import CameraIntrinsics, Pose6D, TriangleMesh
from sandpose.observation import (
    MAX_DEPTH,
    BoundingBox,
    DepthImage,
    crop_and_backproject,
    load_depth,
    load_intrinsics,
    observed_count,
    save_depth,
    save_intrinsics,
)
from sandpose.renderer import render_depth


def image_from(depth_array, quantization=0.0):
    return DepthImage(np.asarray(depth_array, dtype=np.float64), quantization=quantization)


def write_mm_png(path, mm):
    Image.fromarray(np.asarray(mm, dtype=np.uint16)).save(path)


class TestBoundingBox:
    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            BoundingBox(10, 10, 10, 20)

    def test_clamp_partial(self):
        b = BoundingBox(-5, 3, 40, 200).clamp(32, 32)
        assert b.as_tuple() == (0, 3, 32, 32)

    def test_clamp_outside_raises(self):
        with pytest.raises(ValueError, match="outside"):
            BoundingBox(40, 40, 50, 50).clamp(32, 32)

    def test_center_integer_grid(self):
        assert BoundingBox(2, 4, 5, 8).center == (3.0, 5.5)


class TestLoadDepth:
    def test_millimeter_conversion(self, tmp_path, small_cam):
        mm = np.zeros((128, 128), dtype=np.uint16)
        mm[10, 20] = 1500
        f = tmp_path / "d.png"
        write_mm_png(f, mm)
        img = load_depth(f, small_cam)
        assert img.depth[10, 20] == 1.5
        assert img.valid[10, 20]

    def test_zero_is_invalid(self, tmp_path, small_cam):
        f = tmp_path / "d.png"
        write_mm_png(f, np.zeros((128, 128), dtype=np.uint16))
        img = load_depth(f, small_cam)
        assert not img.valid.any()

    def test_dimension_mismatch(self, tmp_path, small_cam):
        f = tmp_path / "d.png"
        write_mm_png(f, np.zeros((64, 64), dtype=np.uint16))
        with pytest.raises(ValueError, match="intrinsics expect"):
            load_depth(f, small_cam)

    def test_beyond_max_depth_invalid(self, tmp_path, small_cam):
        mm = np.zeros((128, 128), dtype=np.uint16)
        mm[0, 0] = int(MAX_DEPTH * 1000) + 500
        f = tmp_path / "d.png"
        write_mm_png(f, mm)
        assert not load_depth(f, small_cam).valid[0, 0]

    def test_rgb_file_rejected(self, tmp_path, small_cam):
        f = tmp_path / "rgb.png"
        Image.new("RGB", (128, 128)).save(f)
        with pytest.raises(ValueError, match="grayscale"):
            load_depth(f, small_cam)

    def test_save_load_roundtrip(self, tmp_path, small_cam):
        rng = np.random.default_rng(0)
        depth = np.round(rng.uniform(0.3, 2.0, (128, 128)) * 1000) / 1000
        depth[rng.random((128, 128)) < 0.1] = 0.0
        img = image_from(depth, quantization=0.001)
        f = tmp_path / "d.png"
        save_depth(img, f)
        again = load_depth(f, small_cam)
        assert np.array_equal(again.depth, img.depth)


class TestIntrinsicsIO:
    def test_roundtrip(self, tmp_path, small_cam):
        f = tmp_path / "cam.json"
        save_intrinsics(small_cam, f)
        assert load_intrinsics(f) == small_cam


class TestCropAndBackproject:
    def test_all_invalid_crop_is_empty(self, small_cam):
        img = image_from(np.zeros((128, 128)))
        cloud = crop_and_backproject(img, BoundingBox(10, 10, 30, 30), small_cam)
        assert len(cloud) == 0

    def test_principal_pixel(self, small_cam):
        depth = np.zeros((128, 128))
        depth[64, 64] = 2.0
        cloud = crop_and_backproject(image_from(depth), BoundingBox(64, 64, 65, 65), small_cam)
        assert np.allclose(cloud.points, [[0, 0, 2.0]])
        assert np.array_equal(cloud.pixels, [[64, 64]])

    def test_full_image_box_counts_valid_pixels(self, small_cam):
        plane = TriangleMesh(
            np.array([[-50.0, -50.0, 1.0], [50.0, -50.0, 1.0], [0.0, 50.0, 1.0]]),
            np.array([[0, 1, 2]]),
        )
        buf = render_depth(plane, Pose6D.identity(), small_cam)
        img = image_from(np.where(buf.valid, buf.depth, 0.0))
        cloud = crop_and_backproject(img, BoundingBox(0, 0, 128, 128), small_cam)
        assert len(cloud) == int(img.valid.sum()) == 128 * 128

    def test_box_clamped_not_rejected(self, small_cam):
        depth = np.full((128, 128), 1.0)
        cloud = crop_and_backproject(image_from(depth), BoundingBox(-10, -10, 5, 5), small_cam)
        assert len(cloud) == 25

    def test_disjoint_union_equals_concatenation(self, small_cam):
        rng = np.random.default_rng(1)
        depth = rng.uniform(0.5, 2.0, (128, 128))
        depth[rng.random((128, 128)) < 0.3] = 0.0
        img = image_from(depth)
        # vertical split: row-major order makes the union literally the concatenation
        a = crop_and_backproject(img, BoundingBox(10, 0, 50, 40), small_cam)
        b = crop_and_backproject(img, BoundingBox(10, 40, 50, 90), small_cam)
        both = crop_and_backproject(img, BoundingBox(10, 0, 50, 90), small_cam)
        assert np.array_equal(both.points, np.vstack([a.points, b.points]))
        assert np.array_equal(both.pixels, np.vstack([a.pixels, b.pixels]))
        # horizontal split: same content up to pixel order
        a = crop_and_backproject(img, BoundingBox(0, 10, 40, 50), small_cam)
        b = crop_and_backproject(img, BoundingBox(40, 10, 90, 50), small_cam)
        both = crop_and_backproject(img, BoundingBox(0, 10, 90, 50), small_cam)

        def sorted_rows(cloud):
            rows = np.hstack([cloud.pixels, cloud.points])
            return rows[np.lexsort(rows.T[::-1])]

        assert np.array_equal(
            sorted_rows(both), sorted_rows(type(both)(np.vstack([a.points, b.points]),
                                                      np.vstack([a.pixels, b.pixels])))
        )

    def test_reprojection_recovers_pixel_and_depth(self, small_cam):
        rng = np.random.default_rng(2)
        depth = np.round(rng.uniform(0.4, 3.0, (128, 128)) * 1000) / 1000
        img = image_from(depth, quantization=0.001)
        cloud = crop_and_backproject(img, BoundingBox(5, 9, 100, 90), small_cam)
        u = cloud.points[:, 0] / cloud.points[:, 2] * small_cam.fx + small_cam.cx
        v = cloud.points[:, 1] / cloud.points[:, 2] * small_cam.fy + small_cam.cy
        assert np.abs(u - cloud.pixels[:, 1]).max() < 0.5
        assert np.abs(v - cloud.pixels[:, 0]).max() < 0.5
        src = depth[cloud.pixels[:, 0], cloud.pixels[:, 1]]
        assert np.abs(cloud.points[:, 2] - src).max() <= 0.001


class TestObservedCount:
    def test_empty(self, small_cam):
        img = image_from(np.zeros((128, 128)))
        assert observed_count(crop_and_backproject(img, BoundingBox(0, 0, 8, 8), small_cam)) == 0

    def test_single(self, small_cam):
        depth = np.zeros((128, 128))
        depth[64, 64] = 2.0
        img = image_from(depth)
        box = BoundingBox(64, 64, 65, 65)
        assert observed_count(crop_and_backproject(img, box, small_cam)) == 1

    def test_matches_mask_popcount(self, small_cam):
        rng = np.random.default_rng(3)
        depth = rng.uniform(0.5, 2.0, (128, 128))
        depth[rng.random((128, 128)) < 0.4] = 0.0
        img = image_from(depth)
        box = BoundingBox(17, 23, 77, 91)
        expected = int((depth[23:91, 17:77] > 0).sum())
        assert observed_count(crop_and_backproject(img, box, small_cam)) == expected


class TestDepthImageValidation:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            image_from(np.full((4, 4), -1.0))

    def test_rejects_beyond_max(self):
        with pytest.raises(ValueError):
            image_from(np.full((4, 4), MAX_DEPTH + 1))
