"""Geometry: back-projection/projection round trips, voxel overlap, box IoU.

Expected values are hand-computed from the pinhole model
p_cam = depth * [(u-cx)/fx, (v-cy)/fy, 1] and camera-to-world poses.
"""

from __future__ import annotations

import numpy as np
import pytest

from ovmap3d.errors import (
    BehindCamera,
    EmptyInput,
    InvalidDepth,
    OutOfBounds,
    SizeMismatch,
)
from ovmap3d.geometry import (
    Box3,
    Frame,
    Intrinsics,
    Pose,
    VoxelSet,
    back_project,
    back_project_pixels,
    box_iou3d,
    look_at,
    project,
    voxel_iov,
    voxelize,
)

from conftest import make_frame, random_pose


class TestBackProject:
    def test_principal_point_is_optical_axis(self):
        frame = make_frame(depth_value=2.0)
        cx, cy = frame.intrinsics.cx, frame.intrinsics.cy
        pt = back_project((int(cx), int(cy)), frame)
        np.testing.assert_allclose(pt, [0.0, 0.0, 2.0], atol=1e-12)

    def test_one_focal_length_off_center(self):
        # u = cx + fx -> (u-cx)/fx = 1 -> x = depth * 1 = 2.0
        frame = make_frame(width=256, height=192, depth_value=2.0, fx=60.0)
        k = frame.intrinsics
        pt = back_project((int(k.cx + k.fx), int(k.cy)), frame)
        expected = np.array([2.0, 0.0, 2.0])
        # hand-computed K^-1 p~ * d as a matrix product
        k_inv = np.linalg.inv(k.matrix)
        manual = 2.0 * (k_inv @ np.array([k.cx + k.fx, k.cy, 1.0]))
        np.testing.assert_allclose(manual, expected, atol=1e-12)
        np.testing.assert_allclose(pt, expected, atol=1e-12)

    def test_zero_depth_rejected(self):
        frame = make_frame()
        frame.depth[10, 10] = 0.0
        with pytest.raises(InvalidDepth):
            back_project((10, 10), frame)

    def test_nan_depth_rejected(self):
        frame = make_frame()
        frame.depth[3, 4] = np.nan
        with pytest.raises(InvalidDepth):
            back_project((4, 3), frame)

    def test_out_of_bounds(self):
        frame = make_frame(width=64, height=48)
        with pytest.raises(OutOfBounds):
            back_project((64, 0), frame)
        with pytest.raises(OutOfBounds):
            back_project((0, -1), frame)


class TestProject:
    def test_principal_point_inverse(self):
        frame = make_frame(depth_value=2.0)
        (u, v), d = project(np.array([0.0, 0.0, 2.0]), frame)
        assert u == pytest.approx(frame.intrinsics.cx)
        assert v == pytest.approx(frame.intrinsics.cy)
        assert d == pytest.approx(2.0)

    def test_behind_camera(self):
        frame = make_frame()
        with pytest.raises(BehindCamera):
            project(np.array([0.0, 0.0, -1.0]), frame)

    def test_round_trip_1000_random(self, rng):
        """project(back_project(p)) == p within 0.5 px / 1e-4 m."""
        for _ in range(20):
            pose = random_pose(rng)
            frame = make_frame(width=80, height=60, pose=pose)
            frame.depth[:] = rng.uniform(0.3, 8.0, frame.depth.shape)
            us = rng.integers(0, 80, 50)
            vs = rng.integers(0, 60, 50)
            for u, v in zip(us, vs):
                world = back_project((u, v), frame)
                (pu, pv), pd = project(world, frame)
                assert abs(pu - u) < 0.5
                assert abs(pv - v) < 0.5
                assert abs(pd - frame.depth[v, u]) < 1e-4

    def test_vectorized_matches_scalar(self, rng):
        pose = random_pose(rng)
        frame = make_frame(width=32, height=24, pose=pose)
        frame.depth[:] = rng.uniform(0.5, 4.0, frame.depth.shape)
        us = rng.integers(0, 32, 40)
        vs = rng.integers(0, 24, 40)
        batch = back_project_pixels(us, vs, frame.depth[vs, us], frame)
        for i, (u, v) in enumerate(zip(us, vs)):
            np.testing.assert_allclose(
                batch[i], back_project((u, v), frame), atol=1e-12
            )


class TestVoxelize:
    def test_single_point(self):
        vs = voxelize([(0.01, 0.01, 0.01)], 0.05)
        assert vs.occupied == {(0, 0, 0)}

    def test_same_cell_collapses(self):
        vs = voxelize([(0.01, 0.01, 0.01), (0.04, 0.02, 0.03)], 0.05)
        assert len(vs) == 1

    def test_negative_coordinates_floor(self):
        vs = voxelize([(-0.01, 0.0, 0.07)], 0.05)
        assert vs.occupied == {(-1, 0, 1)}

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            voxelize(np.empty((0, 3)), 0.05)

    def test_random_against_hash_set_oracle(self, rng):
        pts = rng.uniform(-3, 3, (1000, 3))
        size = 0.07
        vs = voxelize(pts, size)
        oracle = set()
        for p in pts:
            oracle.add(
                (
                    int(np.floor(p[0] / size)),
                    int(np.floor(p[1] / size)),
                    int(np.floor(p[2] / size)),
                )
            )
        assert vs.occupied == oracle

    def test_permutation_invariant(self, rng):
        pts = rng.uniform(-1, 1, (200, 3))
        a = voxelize(pts, 0.1)
        b = voxelize(pts[::-1], 0.1)
        assert a.occupied == b.occupied


class TestVoxelIov:
    def test_identical(self):
        a = VoxelSet(0.05, {(0, 0, 0), (1, 0, 0)})
        assert voxel_iov(a, a) == (1.0, 1.0)

    def test_disjoint(self):
        a = VoxelSet(0.05, {(0, 0, 0)})
        b = VoxelSet(0.05, {(5, 5, 5)})
        assert voxel_iov(a, b) == (0.0, 0.0)

    def test_containment_ten_in_hundred(self):
        big = {(i, j, 0) for i in range(10) for j in range(10)}
        small = {(i, 0, 0) for i in range(10)}
        iov_ab, iov_ba = voxel_iov(VoxelSet(1.0, small), VoxelSet(1.0, big))
        assert iov_ab == 1.0
        assert iov_ba == pytest.approx(0.1)

    def test_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            voxel_iov(
                VoxelSet(0.05, {(0, 0, 0)}), VoxelSet(0.1, {(0, 0, 0)})
            )

    def test_shared_numerator_identity(self, rng):
        for _ in range(20):
            a = frozenset(
                map(tuple, rng.integers(0, 6, (rng.integers(1, 40), 3)))
            )
            b = frozenset(
                map(tuple, rng.integers(0, 6, (rng.integers(1, 40), 3)))
            )
            if not (a & b):
                continue
            iov_ab, iov_ba = voxel_iov(VoxelSet(1.0, a), VoxelSet(1.0, b))
            inter = len(a & b)
            assert iov_ab == inter / len(a)
            assert iov_ba == inter / len(b)


class TestBoxIou:
    def test_identical_unit_cubes(self):
        a = Box3(np.zeros(3), np.ones(3))
        assert box_iou3d(a, a) == 1.0

    def test_disjoint(self):
        a = Box3(np.zeros(3), np.ones(3))
        b = Box3(np.ones(3) * 2, np.ones(3) * 3)
        assert box_iou3d(a, b) == 0.0

    def test_half_shifted_cube(self):
        # intersection 0.5, union 1.5 -> 1/3
        a = Box3(np.zeros(3), np.ones(3))
        b = Box3(np.array([0.5, 0.0, 0.0]), np.array([1.5, 1.0, 1.0]))
        assert box_iou3d(a, b) == pytest.approx(1.0 / 3.0)

    def test_symmetry_random(self, rng):
        for _ in range(50):
            lo_a = rng.uniform(-1, 1, 3)
            lo_b = rng.uniform(-1, 1, 3)
            a = Box3(lo_a, lo_a + rng.uniform(0.1, 1, 3))
            b = Box3(lo_b, lo_b + rng.uniform(0.1, 1, 3))
            assert box_iou3d(a, b) == box_iou3d(b, a)
            if box_iou3d(a, b) == 1.0:
                np.testing.assert_array_equal(a.min_corner, b.min_corner)


class TestPoseAndFrame:
    def test_pose_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 2.0, np.zeros(3))

    def test_pose_rejects_reflection(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            Pose(r, np.zeros(3))

    def test_pose_inverse(self, rng):
        p = random_pose(rng)
        m = p.matrix @ p.inverse().matrix
        np.testing.assert_allclose(m, np.eye(4), atol=1e-12)

    def test_look_at_centers_target(self):
        pose = look_at((3.0, 1.0, 0.5), (0.0, 0.0, 0.5))
        intr = Intrinsics(60, 60, 32, 24, 64, 48)
        frame = Frame(
            0, np.full((48, 64), 1.0), intr, pose
        )
        (u, v), d = project(np.array([0.0, 0.0, 0.5]), frame)
        assert u == pytest.approx(32.0, abs=1e-9)
        assert v == pytest.approx(24.0, abs=1e-9)
        assert d == pytest.approx(np.sqrt(10.0))

    def test_frame_dimension_check(self):
        intr = Intrinsics(60, 60, 32, 24, 64, 48)
        with pytest.raises(ValueError):
            Frame(0, np.ones((10, 10)), intr, Pose.identity())

    def test_frame_negative_depth_rejected(self):
        intr = Intrinsics(60, 60, 32, 24, 64, 48)
        depth = np.ones((48, 64))
        depth[0, 0] = -1.0
        with pytest.raises(ValueError):
            Frame(0, depth, intr, Pose.identity())
