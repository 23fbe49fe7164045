"""CLI workflows over synthetic scenes with the mock gateways."""

from __future__ import annotations

import json

import pytest

from ovmap3d.cli import main
from ovmap3d.io import read_object_map
from ovmap3d.queries import generate_queries, write_queries
from ovmap3d.synth import synth_scene

from scenes import query_scene_spec


def write_spec_json(path, n_objects=3, seed=3):
    doc = {
        "seed": seed,
        "scene_id": "cliscene",
        "image": {"width": 160, "height": 120, "fov_deg": 60},
        "objects": [
            {"kind": "box", "class": "couch", "center": [0.0, 0.8, 0.25],
             "size": [0.9, 0.4, 0.5]},
            {"kind": "sphere", "class": "vase", "center": [0.1, -0.7, 0.35],
             "radius": 0.2},
            {"kind": "box", "class": "table", "center": [-0.85, -0.1, 0.35],
             "size": [0.45, 0.45, 0.25]},
        ][:n_objects],
        "trajectory": {"target": [0.0, 0.0, 0.35], "radius": 2.4,
                       "height": 2.35, "count": 5, "start_deg": 33,
                       "span_deg": 24},
    }
    path.write_text(json.dumps(doc))
    return path


class TestSynthFuseSegmentEval:
    def test_full_chain_perfect_miou(self, tmp_path, capsys):
        spec = write_spec_json(tmp_path / "spec.json")
        assert main(["synth", str(spec), "--out", str(tmp_path / "scene")]) == 0
        manifest = tmp_path / "scene" / "manifest.json"
        omap = tmp_path / "scene" / "objects.ovom"
        assert main(["fuse", str(manifest), "--out", str(omap)]) == 0
        objects, _, _ = read_object_map(omap)
        assert len(objects) == 3  # one fused object per primitive

        assert main(
            [
                "segment-eval", str(manifest), str(omap),
                "--out", str(tmp_path / "metrics"),
            ]
        ) == 0
        kv = (tmp_path / "metrics" / "metrics.kv").read_text()
        values = dict(line.split("=") for line in kv.strip().splitlines())
        assert float(values["mIoU"]) == pytest.approx(1.0)
        assert float(values["mAcc"]) == pytest.approx(1.0)
        assert float(values["fmIoU"]) == pytest.approx(1.0)
        assert int(values["objects"]) == int(values["gt_instances"]) == 3
        assert (tmp_path / "metrics" / "metrics.txt").exists()

    def test_segment_eval_aggregate_over_two_scenes(self, tmp_path):
        for name, seed in (("a", 3), ("b", 4)):
            spec = write_spec_json(tmp_path / f"{name}.json", seed=seed)
            doc = json.loads(spec.read_text())
            doc["scene_id"] = name
            spec.write_text(json.dumps(doc))
            main(["synth", str(spec), "--out", str(tmp_path / name)])
            main(
                ["fuse", str(tmp_path / name / "manifest.json"),
                 "--out", str(tmp_path / name / "objects.ovom")]
            )
        code = main(
            [
                "segment-eval",
                str(tmp_path / "a" / "manifest.json"),
                str(tmp_path / "a" / "objects.ovom"),
                str(tmp_path / "b" / "manifest.json"),
                str(tmp_path / "b" / "objects.ovom"),
                "--out", str(tmp_path / "metrics"),
            ]
        )
        assert code == 0
        agg = (tmp_path / "metrics" / "metrics.aggregate.kv").read_text()
        values = dict(line.split("=") for line in agg.strip().splitlines())
        assert float(values["mIoU"]) == pytest.approx(1.0)
        assert int(values["scenes"]) == 2
        assert (tmp_path / "metrics" / "metrics.a.kv").exists()
        assert (tmp_path / "metrics" / "metrics.b.kv").exists()

    def test_fuse_missing_manifest_exits_nonzero(self, tmp_path, capsys):
        missing = tmp_path / "nowhere" / "manifest.json"
        code = main(["fuse", str(missing)])
        assert code == 1
        err = capsys.readouterr().err
        assert "manifest.json" in err

    def test_inspect(self, tmp_path, capsys):
        spec = write_spec_json(tmp_path / "spec.json")
        main(["synth", str(spec), "--out", str(tmp_path / "scene")])
        omap = tmp_path / "scene" / "objects.ovom"
        main(["fuse", str(tmp_path / "scene" / "manifest.json"),
              "--out", str(omap)])
        assert main(["inspect", str(omap)]) == 0
        out = capsys.readouterr().out
        assert "3 objects" in out


class TestRetrieveEval:
    @pytest.fixture
    def query_scene(self, tmp_path):
        scene_dir = tmp_path / "scenes" / "queryscene"
        result = synth_scene(query_scene_spec(), scene_dir)
        queries = generate_queries(result.gt, "queryscene", max_queries=20)
        assert len(queries) >= 8
        qpath = tmp_path / "queries.jsonl"
        write_queries(qpath, queries)
        return tmp_path, qpath, queries

    def test_accuracy_one_with_gt_backed_mock(self, query_scene, capsys):
        tmp_path, qpath, queries = query_scene
        code = main(
            [
                "retrieve-eval", str(qpath),
                "--scenes", str(tmp_path / "scenes"),
                "--out", str(tmp_path / "results.jsonl"),
                "--gateway", "mock",
            ]
        )
        assert code == 0
        rows = [
            json.loads(line)
            for line in (tmp_path / "results.jsonl").read_text().splitlines()
        ]
        assert len(rows) == len(queries)
        for row in rows:
            assert row["iou"] > 0.25, row["text"]
        out = capsys.readouterr().out
        assert "overall" in out

    def test_record_then_replay_is_bit_reproducible(self, query_scene):
        tmp_path, qpath, _ = query_scene
        log = tmp_path / "gateway.log"
        args = [
            "retrieve-eval", str(qpath),
            "--scenes", str(tmp_path / "scenes"),
        ]
        assert main(
            args + ["--out", str(tmp_path / "r1.jsonl"), "--gateway", "mock",
                    "--record", str(log)]
        ) == 0
        assert main(
            args + ["--out", str(tmp_path / "r2.jsonl"), "--gateway", "replay",
                    "--replay-log", str(log)]
        ) == 0
        assert (tmp_path / "r1.jsonl").read_bytes() == (
            tmp_path / "r2.jsonl"
        ).read_bytes()

    def test_single_retrieve(self, query_scene, capsys):
        tmp_path, _, _ = query_scene
        manifest = tmp_path / "scenes" / "queryscene" / "manifest.json"
        code = main(
            [
                "retrieve", str(manifest),
                "the table that is far from the armchair",
                "--gateway", "mock",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "object" in out and "box" in out

    def test_retrieve_from_prebuilt_object_map(self, query_scene, capsys):
        tmp_path, _, _ = query_scene
        manifest = tmp_path / "scenes" / "queryscene" / "manifest.json"
        omap = tmp_path / "scenes" / "queryscene" / "objects.ovom"
        assert main(["fuse", str(manifest), "--out", str(omap)]) == 0
        capsys.readouterr()
        code = main(
            [
                "retrieve", str(manifest),
                "the trashcan that is nearest to the cabinet",
                "--object-map", str(omap),
                "--gateway", "mock",
            ]
        )
        assert code == 0
        assert "similarity 1.0000" in capsys.readouterr().out


class TestSynthQueriesFlag:
    def test_synth_writes_query_file(self, tmp_path):
        spec_doc = {
            "seed": 7,
            "scene_id": "qs",
            "image": {"width": 160, "height": 120, "fov_deg": 60},
            "objects": [
                {"kind": "box", "class": "cabinet", "center": [0.9, 0.0, 0.4],
                 "size": [0.45, 0.45, 0.6]},
                {"kind": "sphere", "class": "trashcan",
                 "center": [0.0, -0.75, 0.3], "radius": 0.18},
                {"kind": "sphere", "class": "trashcan",
                 "center": [0.2, 0.8, 0.3], "radius": 0.18},
            ],
            "trajectory": {"target": [0.0, 0.0, 0.35], "radius": 2.4,
                           "height": 2.35, "count": 6, "start_deg": -25,
                           "span_deg": 50},
        }
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(spec_doc))
        code = main(
            ["synth", str(spec), "--out", str(tmp_path / "qs"),
             "--queries", "8"]
        )
        assert code == 0
        lines = (tmp_path / "qs" / "queries.jsonl").read_text().splitlines()
        assert 1 <= len(lines) <= 8
        for line in lines:
            q = json.loads(line)
            assert q["scene"] == "qs"
