"""Command-line surface tying the pipeline together.

Subcommands: synth, fuse, segment-eval, retrieve, retrieve-eval, inspect.
Every tunable lives in a key/value config file; individual flags override
single values, and every written artifact embeds the config hash.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import PipelineError
from .geometry import Box3
from .gateway import (
    GatewayConfig,
    HttpGateway,
    MockGateway,
    RecordingGateway,
    ReplayGateway,
)
from .gtmock import GtSceneGateway
from .io import (
    load_scene,
    read_object_map,
    write_config,
    write_object_map,
)
from .labeling import (
    TextPromptSet,
    assign_labels,
    compute_metrics,
    format_metrics_kv,
    format_metrics_table,
)
from .pipeline import fuse_from_scene
from .queries import generate_queries, read_queries, write_queries
from .retrieval import GroundingResult, grounding_report, run_query
from .synth import spec_from_json, synth_scene


def _add_common(p):
    p.add_argument("--config", help="pipeline config file (key = value lines)")
    p.add_argument("--voxel-size", type=float, dest="voxel_size")
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--weights", help="five comma-separated crop weights")
    p.add_argument("--topk", type=int)
    p.add_argument("--seed", type=int, help="mock embedder seed")
    p.add_argument(
        "--gateway", choices=("live", "mock", "replay"), default="mock"
    )
    p.add_argument("--replay-log", dest="replay_log")
    p.add_argument("--record", help="record gateway traffic to this log")
    p.add_argument("--endpoint", help="live gateway base URL")


def _build_config(args) -> PipelineConfig:
    cfg = (
        PipelineConfig.from_file(args.config)
        if getattr(args, "config", None)
        else PipelineConfig()
    )
    if getattr(args, "voxel_size", None) is not None:
        cfg.voxel_size = args.voxel_size
    if getattr(args, "gamma", None) is not None:
        cfg.gamma = args.gamma
    if getattr(args, "delta", None) is not None:
        cfg.delta = args.delta
    if getattr(args, "topk", None) is not None:
        cfg.topk = args.topk
    if getattr(args, "seed", None) is not None:
        cfg.mock_seed = args.seed
    if getattr(args, "weights", None):
        parts = [float(w) for w in args.weights.split(",")]
        if len(parts) != 5:
            raise PipelineError("--weights needs five comma-separated values")
        cfg.w_mask, cfg.w_bbox, cfg.w_large, cfg.w_huge, cfg.w_sur = parts
    return cfg


def _make_gateway(args, cfg: PipelineConfig, scene=None):
    mode = getattr(args, "gateway", "mock")
    if mode == "replay":
        if not getattr(args, "replay_log", None):
            raise PipelineError("--replay-log is required with --gateway replay")
        gw = ReplayGateway(args.replay_log)
    elif mode == "live":
        endpoint = getattr(args, "endpoint", None) or os.environ.get(
            "OVMAP3D_ENDPOINT", "http://127.0.0.1:8080/v1"
        )
        gw = HttpGateway(
            GatewayConfig(endpoint=endpoint, embed_dim=cfg.embed_dim)
        )
    else:
        if scene is not None and scene.gt is not None:
            gw = GtSceneGateway(
                scene.gt, scene.frames, dim=cfg.embed_dim, seed=cfg.mock_seed
            )
        else:
            gw = MockGateway(dim=cfg.embed_dim, seed=cfg.mock_seed)
    if getattr(args, "record", None):
        gw = RecordingGateway(gw, args.record)
    return gw


def cmd_synth(args) -> int:
    cfg = _build_config(args)
    spec = spec_from_json(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    out = Path(args.out or Path(args.spec).with_suffix(""))
    result = synth_scene(spec, out, config=cfg)
    write_config(out / "config.txt", cfg)
    print(f"scene written to {result.manifest_path}")
    if args.queries:
        queries = generate_queries(result.gt, spec.scene_id, args.queries)
        qpath = out / "queries.jsonl"
        write_queries(qpath, queries)
        print(f"{len(queries)} queries written to {qpath}")
    return 0


def cmd_fuse(args) -> int:
    cfg = _build_config(args)
    scene = load_scene(args.manifest)
    objects = fuse_from_scene(scene, cfg)
    out = Path(args.out or Path(args.manifest).parent / "objects.ovom")
    write_object_map(out, objects, cfg.config_hash(), cfg.voxel_size)
    print(f"{len(objects)} objects written to {out}")
    return 0


def _eval_one_scene(manifest, object_map, cfg, args):
    scene = load_scene(manifest)
    if scene.gt is None:
        raise PipelineError(f"{manifest}: no ground-truth annotation")
    objects, _, _ = read_object_map(object_map)
    gateway = _make_gateway(args, cfg, scene)
    prompts = TextPromptSet.from_gateway(
        scene.gt.classes, gateway, cfg.prompt_template
    )
    labeled = assign_labels(objects, prompts)
    pred_point_labels = []
    for lo in labeled:
        cls = prompts.classes[lo.label_index]
        pred_point_labels.extend((p, cls) for p in lo.object.points)
    metrics = compute_metrics(
        pred_point_labels, scene.gt.point_labels(), cfg.match_radius
    )
    return scene, objects, metrics


def cmd_segment_eval(args) -> int:
    """Score one or more (manifest, object map) pairs; writes per-scene
    metrics files plus an aggregate when more than one scene is given."""
    cfg = _build_config(args)
    paths = [args.manifest, args.object_map, *args.more]
    if len(paths) % 2 != 0:
        raise PipelineError(
            "segment-eval expects manifest/object-map pairs"
        )
    pairs = list(zip(paths[0::2], paths[1::2]))

    out_dir = Path(args.out or Path(pairs[0][0]).parent)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_scene = []
    for manifest, object_map in pairs:
        scene, objects, metrics = _eval_one_scene(manifest, object_map, cfg, args)
        sid = scene.manifest.scene_id
        suffix = f".{sid}" if len(pairs) > 1 else ""
        table = format_metrics_table(metrics)
        (out_dir / f"metrics{suffix}.txt").write_text(
            f"# config {cfg.config_hash()}\n" + table
        )
        (out_dir / f"metrics{suffix}.kv").write_text(
            f"config_hash={cfg.config_hash()}\n"
            + f"objects={len(objects)}\n"
            + f"gt_instances={len(scene.gt.instances)}\n"
            + format_metrics_kv(metrics)
        )
        print(f"scene {sid}")
        print(table)
        print(
            f"objects: {len(objects)}  gt instances: "
            f"{len(scene.gt.instances)}"
        )
        per_scene.append(metrics)

    if len(per_scene) > 1:
        lines = [f"config_hash={cfg.config_hash()}", f"scenes={len(per_scene)}"]
        for name in ("mAcc", "mIoU", "fmIoU"):
            mean = sum(getattr(m, name) for m in per_scene) / len(per_scene)
            lines.append(f"{name}={mean:.6f}")
            print(f"aggregate {name}: {mean:.4f}")
        (out_dir / "metrics.aggregate.kv").write_text("\n".join(lines) + "\n")
    return 0


def _scene_objects(scene, args, cfg):
    if getattr(args, "object_map", None):
        objects, _, _ = read_object_map(args.object_map)
        return objects
    return fuse_from_scene(scene, cfg)


def cmd_retrieve(args) -> int:
    cfg = _build_config(args)
    scene = load_scene(args.manifest)
    objects = _scene_objects(scene, args, cfg)
    gateway = _make_gateway(args, cfg, scene)
    outcome = run_query(
        args.query,
        objects,
        scene.frames,
        gateway,
        topk=cfg.topk,
        dedup_overlap=cfg.dedup_overlap,
        lambda_occ=cfg.lambda_occ,
        depth_tol=cfg.depth_tol,
        n_bins=cfg.n_bins,
        prompt_template=cfg.prompt_template,
    )
    box = outcome.predicted_box
    print(f"object {outcome.chosen.object.id}")
    print(f"similarity {outcome.chosen.similarity:.4f}")
    print(
        "box "
        + " ".join(f"{x:.4f}" for x in (*box.min_corner, *box.max_corner))
    )
    return 0


def cmd_retrieve_eval(args) -> int:
    cfg = _build_config(args)
    queries = read_queries(args.queries)
    scenes_dir = Path(args.scenes or Path(args.queries).parent)

    loaded = {}
    results = []
    tags = []
    rows = []
    for q in queries:
        sid = q["scene"]
        if sid not in loaded:
            manifest = scenes_dir / sid / "manifest.json"
            if not manifest.exists():
                manifest = scenes_dir / "manifest.json"
            scene = load_scene(manifest)
            objects = fuse_from_scene(scene, cfg)
            gateway = _make_gateway(args, cfg, scene)
            loaded[sid] = (scene, objects, gateway)
        scene, objects, gateway = loaded[sid]
        outcome = run_query(
            q["text"],
            objects,
            scene.frames,
            gateway,
            topk=cfg.topk,
            dedup_overlap=cfg.dedup_overlap,
            lambda_occ=cfg.lambda_occ,
            depth_tol=cfg.depth_tol,
            n_bins=cfg.n_bins,
            prompt_template=cfg.prompt_template,
        )
        gt_box = Box3(np.array(q["gt_box"][:3]), np.array(q["gt_box"][3:]))
        res = GroundingResult.from_boxes(
            outcome.predicted_box, gt_box, tuple(cfg.iou_thresholds)
        )
        results.append(res)
        tags.append(q["tag"])
        rows.append(
            {
                "scene": sid,
                "text": q["text"],
                "iou": res.iou,
                "correct_at": {str(t): v for t, v in res.correct_at.items()},
                "predicted_box": [
                    *res.predicted_box.min_corner,
                    *res.predicted_box.max_corner,
                ],
                "config_hash": cfg.config_hash(),
            }
        )

    report = grounding_report(results, tags, tuple(cfg.iou_thresholds))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    header = "subset".ljust(12) + "".join(
        f"A@{t:g}".rjust(10) for t in cfg.iou_thresholds
    )
    print(header)
    for subset, acc in report.items():
        print(
            subset.ljust(12)
            + "".join(f"{acc[t]:10.4f}" for t in cfg.iou_thresholds)
        )
    return 0


def cmd_inspect(args) -> int:
    objects, config_hash, voxel_size = read_object_map(args.object_map)
    print(f"config 0x{config_hash}  voxel {voxel_size:g} m")
    print(f"{len(objects)} objects")
    for obj in objects:
        box = obj.box
        print(
            f"  #{obj.id}: {len(obj.points)} pts, {obj.merged_count} masks, "
            f"{len(obj.voxels)} voxels, extent "
            + "x".join(f"{e:.2f}" for e in box.extent)
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ovmap3d",
        description="Open-vocabulary 3D mapping and retrieval pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("spec", help="scene spec JSON")
    p.add_argument("--out")
    p.add_argument("--queries", type=int, default=0,
                   help="also write this many templated queries")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fuse", help="fuse a scene into a 3D object map")
    p.add_argument("manifest")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("segment-eval", help="score object maps against GT")
    p.add_argument("manifest")
    p.add_argument("object_map")
    p.add_argument(
        "more", nargs="*",
        help="additional manifest/object-map pairs for an aggregate",
    )
    p.add_argument("--out", help="directory for metrics files")
    _add_common(p)
    p.set_defaults(func=cmd_segment_eval)

    p = sub.add_parser("retrieve", help="answer one query over a scene")
    p.add_argument("manifest")
    p.add_argument("query")
    p.add_argument("--object-map", dest="object_map")
    _add_common(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("retrieve-eval", help="score a query file")
    p.add_argument("queries")
    p.add_argument("--scenes", help="directory containing scene manifests")
    p.add_argument("--out", help="results JSONL path")
    _add_common(p)
    p.set_defaults(func=cmd_retrieve_eval)

    p = sub.add_parser("inspect", help="summarize an object map")
    p.add_argument("object_map")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
