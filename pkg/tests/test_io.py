"""Binary formats (round trips, magic/version rejection, truncation docs),
scene manifests, and the synthetic generator's analytic depth."""

from __future__ import annotations

import json

import numpy as np
import pytest

from ovmap3d.config import PipelineConfig
from ovmap3d.errors import CountMismatch, FormatError, ManifestError
from ovmap3d.fusion import Object3D
from ovmap3d.io import (
    load_manifest,
    load_scene,
    read_depth,
    read_embeddings,
    read_ground_truth,
    read_masks,
    read_object_map,
    read_pose_text,
    write_depth,
    write_embeddings,
    write_ground_truth,
    write_masks,
    write_object_map,
    write_pose_text,
)
from ovmap3d.masks import Mask2D
from ovmap3d.synth import render_frame, spec_from_json, synth_scene

from conftest import random_pose
from scenes import simple_scene_spec


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


class TestDepthFormat:
    def test_round_trip_byte_identical(self, tmp_path, rng):
        depth = rng.uniform(0.2, 6.0, (24, 32))
        depth[0, :5] = 0.0
        p1 = tmp_path / "a.ovdm"
        write_depth(p1, depth, scale=1000.0)
        loaded, scale = read_depth(p1)
        assert scale == 1000.0
        p2 = tmp_path / "b.ovdm"
        write_depth(p2, loaded, scale=scale)
        assert p1.read_bytes() == p2.read_bytes()

    def test_quantization_to_millimeters(self, tmp_path):
        p = tmp_path / "d.ovdm"
        write_depth(p, np.full((2, 2), 1.2345), scale=1000.0)
        loaded, _ = read_depth(p)
        assert loaded[0, 0] == pytest.approx(1.234, abs=1e-9)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.ovdm"
        p.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(FormatError) as err:
            read_depth(p)
        assert "magic" in str(err.value)

    def test_truncation_reports_offset(self, tmp_path):
        p = tmp_path / "t.ovdm"
        write_depth(p, np.full((4, 4), 1.0))
        data = p.read_bytes()
        p.write_bytes(data[:-5])
        with pytest.raises(FormatError) as err:
            read_depth(p)
        assert "byte" in str(err.value)
        assert err.value.offset > 0


class TestPoseText:
    def test_round_trip(self, tmp_path, rng):
        pose = random_pose(rng)
        p = tmp_path / "pose.txt"
        write_pose_text(p, pose)
        again = read_pose_text(p)
        np.testing.assert_allclose(again.matrix, pose.matrix, atol=1e-15)

    def test_wrong_count_rejected(self, tmp_path):
        p = tmp_path / "pose.txt"
        p.write_text("1 0 0\n0 1 0\n")
        with pytest.raises(FormatError):
            read_pose_text(p)


class TestMaskArchive:
    def test_round_trip_byte_identical(self, tmp_path, rng):
        masks = []
        for i in range(7):
            dense = rng.random((20, 24)) < 0.3
            dense[0, 0] = True
            masks.append(Mask2D.from_dense(i % 3, dense, 1 + i % 3))
        p1 = tmp_path / "m1.ovmk"
        write_masks(p1, masks)
        loaded = read_masks(p1)
        assert len(loaded) == 7
        p2 = tmp_path / "m2.ovmk"
        write_masks(p2, loaded)
        assert p1.read_bytes() == p2.read_bytes()
        for a, b in zip(masks, loaded):
            assert a.frame_id == b.frame_id
            assert a.granularity_level == b.granularity_level
            np.testing.assert_array_equal(a.runs, b.runs)

    def test_version_rejected(self, tmp_path):
        p = tmp_path / "m.ovmk"
        write_masks(p, [])
        data = bytearray(p.read_bytes())
        data[4] = 99
        p.write_bytes(bytes(data))
        with pytest.raises(FormatError) as err:
            read_masks(p)
        assert "version" in str(err.value)


class TestEmbeddingArchive:
    def test_round_trip_byte_identical(self, tmp_path, rng):
        arr = rng.standard_normal((6, 5, 16)).astype(np.float32)
        p1 = tmp_path / "e1.ovem"
        write_embeddings(p1, arr)
        loaded = read_embeddings(p1)
        assert loaded.shape == (6, 5, 16)
        p2 = tmp_path / "e2.ovem"
        write_embeddings(p2, loaded)
        assert p1.read_bytes() == p2.read_bytes()

    def test_trailing_bytes_rejected(self, tmp_path, rng):
        p = tmp_path / "e.ovem"
        write_embeddings(p, rng.standard_normal((2, 5, 4)))
        p.write_bytes(p.read_bytes() + b"x")
        with pytest.raises(FormatError):
            read_embeddings(p)


class TestGroundTruthFormat:
    def _gt(self, rng):
        from ovmap3d.geometry import Box3
        from ovmap3d.io import InstanceGT, SceneGroundTruth

        pts = rng.uniform(-1, 1, (50, 3))
        inst = rng.integers(0, 2, 50)
        instances = []
        for i in range(2):
            mine = pts[inst == i]
            instances.append(
                InstanceGT(
                    id=i, class_index=i, box=Box3.of_points(mine),
                    centroid=mine.mean(axis=0),
                )
            )
        return SceneGroundTruth(("chair", "table"), instances, pts, inst)

    def test_round_trip_byte_identical(self, tmp_path, rng):
        gt = self._gt(rng)
        dir_a = tmp_path / "a"
        dir_b = tmp_path / "b"
        dir_a.mkdir()
        dir_b.mkdir()
        write_ground_truth(dir_a / "gt.json", gt)
        again = read_ground_truth(dir_a / "gt.json")
        assert again.classes == ("chair", "table")
        np.testing.assert_allclose(
            again.points, gt.points.astype(np.float32), atol=0
        )
        np.testing.assert_array_equal(again.point_instance, gt.point_instance)
        assert len(again.instances) == 2
        write_ground_truth(dir_b / "gt.json", again)
        assert (dir_a / "gt_points.ovgp").read_bytes() == (
            dir_b / "gt_points.ovgp"
        ).read_bytes()
        assert (dir_a / "gt.json").read_bytes() == (
            dir_b / "gt.json"
        ).read_bytes()


class TestObjectMapFormat:
    def _objects(self, rng, n=3):
        out = []
        for i in range(n):
            pts = rng.uniform(-1, 1, (10 + i, 3))
            out.append(
                Object3D.build(
                    i, pts, 0.05, sources=[(0, i), (1, i)],
                    member_embeddings=[
                        unit(rng.standard_normal(8)),
                        unit(rng.standard_normal(8)),
                    ],
                )
            )
        return out

    def test_round_trip_byte_identical(self, tmp_path, rng):
        objs = self._objects(rng)
        cfg_hash = PipelineConfig().config_hash()
        p1 = tmp_path / "o1.ovom"
        write_object_map(p1, objs, cfg_hash, 0.05)
        loaded, got_hash, voxel = read_object_map(p1)
        assert got_hash == cfg_hash
        assert voxel == pytest.approx(0.05)
        assert [o.merged_count for o in loaded] == [2, 2, 2]
        p2 = tmp_path / "o2.ovom"
        write_object_map(p2, loaded, got_hash, voxel)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path, rng):
        p = tmp_path / "o.ovom"
        write_object_map(p, self._objects(rng), "0" * 32, 0.05)
        data = bytearray(p.read_bytes())
        data[0] = ord("X")
        p.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            read_object_map(p)


class TestManifest:
    def test_synth_scene_loads(self, tmp_path):
        result = synth_scene(simple_scene_spec(), tmp_path / "scene")
        scene = load_scene(result.manifest_path)
        assert len(scene.frames) == 5
        assert len(scene.masks) == len(scene.crop_embeddings)
        assert scene.gt is not None

    def test_missing_file_reported(self, tmp_path):
        result = synth_scene(simple_scene_spec(), tmp_path / "scene")
        (tmp_path / "scene" / "masks.ovmk").unlink()
        with pytest.raises(ManifestError) as err:
            load_manifest(result.manifest_path)
        assert "masks.ovmk" in str(err.value)

    def test_unsorted_frames_rejected(self, tmp_path):
        result = synth_scene(simple_scene_spec(), tmp_path / "scene")
        doc = json.loads(result.manifest_path.read_text())
        doc["frames"] = doc["frames"][::-1]
        result.manifest_path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError):
            load_manifest(result.manifest_path)

    def test_count_mismatch_names_both_files(self, tmp_path, rng):
        result = synth_scene(simple_scene_spec(), tmp_path / "scene")
        emb = read_embeddings(tmp_path / "scene" / "embeddings.ovem")
        write_embeddings(tmp_path / "scene" / "embeddings.ovem", emb[:-2])
        with pytest.raises(CountMismatch) as err:
            load_scene(result.manifest_path)
        assert "masks.ovmk" in str(err.value)
        assert "embeddings.ovem" in str(err.value)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "nope" / "manifest.json")


def slab_depth_oracle(pose, intr, lo, hi, u, v):
    """Scalar ray-box z-depth by the slab method, fully hand-rolled.

    Returns (t, cos_incidence_on_entry_face) or None when the ray misses.
    """
    ray_cam = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d = pose.rotation @ ray_cam
    o = pose.translation
    t_near, t_far = -np.inf, np.inf
    entry_axis = None
    for axis in range(3):
        if abs(d[axis]) < 1e-15:
            if not (lo[axis] <= o[axis] <= hi[axis]):
                return None
            continue
        a = (lo[axis] - o[axis]) / d[axis]
        b = (hi[axis] - o[axis]) / d[axis]
        if min(a, b) > t_near:
            t_near = min(a, b)
            entry_axis = axis
        t_far = min(t_far, max(a, b))
    if t_near > t_far or t_near <= 0 or entry_axis is None:
        return None
    cos_inc = abs(d[entry_axis]) / np.linalg.norm(d)
    return t_near, cos_inc


class TestSynth:
    def test_depth_matches_closed_form_ray_box(self):
        from ovmap3d.synth import MAX_INCIDENCE_DEG

        spec = simple_scene_spec(n_objects=3)
        box = spec.objects[0]
        assert box.kind == "box"
        lo = np.asarray(box.center) - np.asarray(box.size) / 2
        hi = np.asarray(box.center) + np.asarray(box.size) / 2
        pose = spec.poses[0]
        depth, hit = render_frame(pose, spec.intrinsics, [box])
        cos_cutoff = np.cos(np.radians(MAX_INCIDENCE_DEG))
        checked = 0
        for v in range(0, spec.intrinsics.height, 3):
            for u in range(0, spec.intrinsics.width, 3):
                oracle = slab_depth_oracle(pose, spec.intrinsics, lo, hi, u, v)
                if oracle is None:
                    assert depth[v, u] == 0.0
                    continue
                t, cos_inc = oracle
                if depth[v, u] == 0.0:
                    # renderer dropped the return: must be a grazing hit
                    assert cos_inc < cos_cutoff + 1e-12
                else:
                    assert depth[v, u] == pytest.approx(t, abs=1e-6)
                    assert cos_inc >= cos_cutoff - 1e-12
                    checked += 1
        assert checked > 10

    def test_sphere_depth_quadratic_oracle(self):
        from ovmap3d.synth import Primitive

        sphere = Primitive("sphere", "ball", (0.0, 0.0, 0.5), radius=0.3)
        spec = simple_scene_spec()
        pose = spec.poses[2]
        depth, _ = render_frame(pose, spec.intrinsics, [sphere])
        vs, us = np.nonzero(depth > 0)
        assert len(vs) > 10
        for v, u in list(zip(vs, us))[::17]:
            ray_cam = np.array(
                [
                    (u - spec.intrinsics.cx) / spec.intrinsics.fx,
                    (v - spec.intrinsics.cy) / spec.intrinsics.fy,
                    1.0,
                ]
            )
            d = pose.rotation @ ray_cam
            o = pose.translation - np.array(sphere.center)
            a = d @ d
            b = 2 * d @ o
            c = o @ o - sphere.radius**2
            disc = b * b - 4 * a * c
            assert disc >= 0
            t = (-b - np.sqrt(disc)) / (2 * a)
            assert depth[v, u] == pytest.approx(t, abs=1e-9)

    def test_byte_identical_across_runs(self, tmp_path):
        spec = simple_scene_spec()
        a = synth_scene(spec, tmp_path / "a")
        b = synth_scene(simple_scene_spec(), tmp_path / "b")
        for res in (a, b):
            assert res.manifest_path.exists()
        files_a = sorted(p.name for p in (tmp_path / "a").iterdir())
        files_b = sorted(p.name for p in (tmp_path / "b").iterdir())
        assert files_a == files_b
        for name in files_a:
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes(), name

    def test_no_dropout_every_object_present_per_frame(self, tmp_path):
        spec = simple_scene_spec(n_objects=4)
        result = synth_scene(spec, tmp_path / "scene")
        masks = read_masks(tmp_path / "scene" / "masks.ovmk")
        level1 = [m for m in masks if m.granularity_level == 1]
        # 4 objects visible in all 5 frames -> 20 whole-object masks
        assert len(level1) == len(spec.poses) * len(spec.objects)

    def test_gt_points_match_lifted_depth(self, tmp_path):
        from ovmap3d.fusion import lift_mask

        result = synth_scene(simple_scene_spec(n_objects=3), tmp_path / "s")
        scene = load_scene(result.manifest_path)
        level1 = [m for m in scene.masks if m.granularity_level == 1]
        lifted = np.concatenate(
            [
                lift_mask(m, next(f for f in scene.frames if f.id == m.frame_id))
                for m in level1
            ]
        )
        assert lifted.shape[0] == scene.gt.points.shape[0]
        np.testing.assert_allclose(
            np.sort(lifted.round(5), axis=0),
            np.sort(scene.gt.points.round(5), axis=0),
            atol=1e-4,
        )

    def test_spec_json_round_trip(self, tmp_path):
        doc = {
            "seed": 11,
            "image": {"width": 64, "height": 48, "fov_deg": 60},
            "objects": [
                {"kind": "box", "class": "crate", "center": [0, 0, 0.3],
                 "size": [0.4, 0.4, 0.4]},
                {"kind": "sphere", "class": "ball", "center": [0.7, 0, 0.3],
                 "radius": 0.2},
            ],
            "trajectory": {"target": [0, 0, 0.3], "radius": 2.5,
                           "height": 0.8, "count": 3},
        }
        p = tmp_path / "spec.json"
        p.write_text(json.dumps(doc))
        spec = spec_from_json(p)
        assert spec.seed == 11
        assert len(spec.objects) == 2
        assert len(spec.poses) == 3
        synth_scene(spec, tmp_path / "scene")
