"""Synthetic RGB-D scene generation with exact ground truth.

Scenes are a handful of box/sphere primitives observed by a camera
trajectory. Depth is rendered analytically (ray-slab and ray-sphere
intersections parameterized by z-depth, matching the back-projection
convention), masks are emitted at three granularity levels (whole object,
halves, quadrants), and crop embeddings come from the deterministic mock
embedder keyed by each object's class prompt. Ground-truth points are the
back-projections of the quantized on-disk depth, so a lossless pipeline
reproduces them bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .gateway import seeded_unit_vector
from .geometry import (
    Box3,
    Frame,
    Intrinsics,
    Pose,
    back_project_pixels,
    look_at,
)
from .io import (
    InstanceGT,
    SceneGroundTruth,
    read_depth,
    write_depth,
    write_embeddings,
    write_ground_truth,
    write_masks,
    write_pgm,
    write_pose_text,
)
from .masks import Mask2D, rle_encode


@dataclass(frozen=True)
class Primitive:
    kind: str  # "box" | "sphere"
    class_name: str
    center: tuple
    size: tuple = ()  # box: full extents (sx, sy, sz)
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("box", "sphere"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        if self.kind == "box" and len(self.size) != 3:
            raise ValueError("box needs a 3-vector size")
        if self.kind == "sphere" and self.radius <= 0:
            raise ValueError("sphere needs a positive radius")


@dataclass
class SynthSceneSpec:
    seed: int
    room_extent: float
    objects: list
    poses: list
    intrinsics: Intrinsics
    depth_sigma: float = 0.0
    mask_dropout: float = 0.0
    depth_scale: float = 1000.0
    scene_id: str = "synth"

    def __post_init__(self):
        if self.room_extent <= 0:
            raise ValueError("room extent must be positive")
        if not self.objects:
            raise ValueError("at least one object required")
        if len(self.poses) < 2:
            raise ValueError("at least two frames required")


def intrinsics_from_fov(width: int, height: int, fov_deg: float) -> Intrinsics:
    fx = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    return Intrinsics(
        fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height,
    )


def arc_poses(target, radius, height, count, start_deg=-25.0, span_deg=50.0):
    """Cameras on a horizontal arc looking at ``target``."""
    target = np.asarray(target, dtype=np.float64)
    angles = np.radians(
        np.linspace(start_deg, start_deg + span_deg, count)
    )
    poses = []
    for a in angles:
        eye = target + np.array(
            [radius * np.cos(a), radius * np.sin(a), 0.0]
        )
        eye[2] = height
        poses.append(look_at(eye, target))
    return poses


def _ray_box_t(origins, dirs, lo, hi):
    """Smallest positive ray parameter hitting the box, inf when missed,
    plus the cosine of the incidence angle on the entry face.

    Rays are x(t) = o + t*d with d the unnormalized pixel ray whose camera z
    component is 1, so t equals z-depth.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - origins) / dirs
        t1 = (hi - origins) / dirs
    per_axis_near = np.minimum(t0, t1)
    t_near = np.nanmax(per_axis_near, axis=-1)
    t_far = np.nanmin(np.maximum(t0, t1), axis=-1)
    hit = (t_near <= t_far) & (t_near > 1e-9)
    # entry face normal is the axis realizing t_near
    axis = np.nanargmax(
        np.where(np.isnan(per_axis_near), -np.inf, per_axis_near), axis=-1
    )
    d_norm = np.linalg.norm(dirs, axis=-1)
    d_axis = np.take_along_axis(np.abs(dirs), axis[..., None], axis=-1)[..., 0]
    cos_inc = d_axis / d_norm
    return np.where(hit, t_near, np.inf), cos_inc


def _ray_sphere_t(origins, dirs, center, radius):
    oc = origins - center
    a = np.sum(dirs * dirs, axis=-1)
    b = 2.0 * np.sum(dirs * oc, axis=-1)
    c = np.sum(oc * oc, axis=-1) - radius**2
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore"):
        root = (-b - np.sqrt(disc)) / (2 * a)
    hit = (disc >= 0) & (root > 1e-9)
    t = np.where(hit, root, np.inf)
    with np.errstate(invalid="ignore", over="ignore"):
        point = origins + np.where(hit, root, 0.0)[..., None] * dirs
        normal = (point - center) / radius
        cos_inc = np.abs(np.sum(dirs * normal, axis=-1)) / np.linalg.norm(
            dirs, axis=-1
        )
    return t, np.where(hit, cos_inc, 0.0)


# depth returns at grazing incidence are dropped, mimicking real depth
# cameras; keeps lifted surface points densely sampled
MAX_INCIDENCE_DEG = 72.0


def render_frame(pose: Pose, intr: Intrinsics, objects,
                 max_incidence_deg: float = MAX_INCIDENCE_DEG):
    """Analytic z-depth map plus per-pixel hit object index (-1 = none).

    Pixels whose entry surface is steeper than ``max_incidence_deg`` away
    from the ray get invalid depth (0), like a real sensor dropout.
    """
    us, vs = np.meshgrid(
        np.arange(intr.width), np.arange(intr.height)
    )
    rays_cam = np.stack(
        [
            (us - intr.cx) / intr.fx,
            (vs - intr.cy) / intr.fy,
            np.ones_like(us, dtype=np.float64),
        ],
        axis=-1,
    )
    dirs = rays_cam @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs.shape)

    depth = np.full((intr.height, intr.width), np.inf)
    hit = np.full((intr.height, intr.width), -1, dtype=np.int64)
    incidence = np.zeros((intr.height, intr.width))
    for i, obj in enumerate(objects):
        center = np.asarray(obj.center)
        if obj.kind == "box":
            half = np.asarray(obj.size) / 2.0
            t, cos_inc = _ray_box_t(origins, dirs, center - half, center + half)
        else:
            t, cos_inc = _ray_sphere_t(origins, dirs, center, obj.radius)
        closer = t < depth
        depth[closer] = t[closer]
        hit[closer] = i
        incidence[closer] = cos_inc[closer]
    grazing = incidence < np.cos(np.radians(max_incidence_deg))
    hit[grazing] = -1
    depth[hit < 0] = 0.0
    return depth, hit


def _object_mask_levels(hit, obj_idx):
    """Whole-object mask plus its half and quadrant subdivisions."""
    whole = hit == obj_idx
    if not whole.any():
        return []
    rows, cols = np.nonzero(whole)
    col_mid = int(np.median(cols))
    row_mid = int(np.median(rows))
    left = whole & (np.arange(whole.shape[1])[None, :] <= col_mid)
    right = whole & ~left
    top = whole & (np.arange(whole.shape[0])[:, None] <= row_mid)
    quads = [left & top, right & top, left & ~top, right & ~top]
    levels = [(1, [whole]), (2, [m for m in (left, right) if m.any()]),
              (3, [m for m in quads if m.any()])]
    return levels


@dataclass
class SynthResult:
    manifest_path: Path
    gt: SceneGroundTruth
    frames: list
    float_depths: list  # pre-quantization depth maps, one per frame


def synth_scene(spec: SynthSceneSpec, out_dir,
                config: PipelineConfig | None = None) -> SynthResult:
    """Render, write, and ground-truth a synthetic scene.

    Output is byte-identical across runs for a fixed spec. Ground-truth
    points are derived from the quantized depth actually written to disk.
    """
    config = config or PipelineConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    intr = spec.intrinsics

    frames = []
    float_depths = []
    frame_entries = []
    all_masks = []
    crop_blocks = []
    class_vectors = {
        obj.class_name: seeded_unit_vector(
            config.mock_seed,
            config.prompt_template.format(obj.class_name),
            config.embed_dim,
        )
        for obj in spec.objects
    }

    gt_points = []
    gt_instance = []
    observed = np.zeros(len(spec.objects), dtype=np.int64)

    for frame_id, pose in enumerate(spec.poses):
        depth, hit = render_frame(pose, intr, spec.objects)
        if spec.depth_sigma > 0:
            noise = rng.normal(0.0, spec.depth_sigma, depth.shape)
            depth = np.where(depth > 0, np.maximum(depth + noise, 1e-3), 0.0)
        float_depths.append(depth.copy())

        depth_path = out / f"depth_{frame_id:04d}.ovdm"
        write_depth(depth_path, depth, scale=spec.depth_scale)
        # the engine lifts from the on-disk (quantized) depth, so ground
        # truth must be built from exactly those values
        quantized, _ = read_depth(depth_path)

        pose_path = out / f"pose_{frame_id:04d}.txt"
        write_pose_text(pose_path, pose)
        rgb_path = out / f"rgb_{frame_id:04d}.pgm"
        finite = quantized[quantized > 0]
        top = finite.max() if finite.size else 1.0
        write_pgm(rgb_path, np.clip(quantized / top * 255, 0, 255).astype(np.uint8))

        frame = Frame(
            id=frame_id, depth=quantized, intrinsics=intr, pose=pose,
            rgb_path=str(rgb_path),
        )
        frames.append(frame)
        frame_entries.append(
            {
                "id": frame_id,
                "depth": depth_path.name,
                "pose": pose_path.name,
                "rgb": rgb_path.name,
            }
        )

        for obj_idx in range(len(spec.objects)):
            sel = (hit == obj_idx) & (quantized > 0)
            if not sel.any():
                continue
            rows, cols = np.nonzero(sel)
            pts = back_project_pixels(cols, rows, quantized[rows, cols], frame)
            gt_points.append(pts)
            gt_instance.append(np.full(len(pts), obj_idx, dtype=np.int64))
            observed[obj_idx] += len(pts)

            for level, pieces in _object_mask_levels(hit, obj_idx):
                for piece in pieces:
                    if spec.mask_dropout > 0 and rng.random() < spec.mask_dropout:
                        continue
                    runs = rle_encode(piece)
                    all_masks.append(
                        Mask2D(frame_id, piece.shape, runs, level)
                    )
                    vec = class_vectors[spec.objects[obj_idx].class_name]
                    crop_blocks.append(np.tile(vec, (5, 1)))

    if np.any(observed == 0):
        missing = [
            spec.objects[i].class_name
            for i in np.flatnonzero(observed == 0)
        ]
        raise ValueError(f"objects never observed: {missing}")

    points = np.concatenate(gt_points, axis=0)
    instance = np.concatenate(gt_instance, axis=0)
    classes = []
    for obj in spec.objects:
        if obj.class_name not in classes:
            classes.append(obj.class_name)
    instances = []
    for i, obj in enumerate(spec.objects):
        mine = points[instance == i]
        box = Box3.of_points(mine)
        instances.append(
            InstanceGT(
                id=i,
                class_index=classes.index(obj.class_name),
                box=box,
                centroid=mine.mean(axis=0),
            )
        )
    gt = SceneGroundTruth(
        classes=tuple(classes),
        instances=instances,
        points=points,
        point_instance=instance,
    )

    masks_path = out / "masks.ovmk"
    write_masks(masks_path, all_masks)
    emb_path = out / "embeddings.ovem"
    write_embeddings(emb_path, np.stack(crop_blocks))
    gt_path = out / "gt.json"
    write_ground_truth(gt_path, gt)

    manifest = {
        "scene_id": spec.scene_id,
        "config_hash": config.config_hash(),
        "intrinsics": {
            "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height,
        },
        "frames": frame_entries,
        "masks": masks_path.name,
        "embeddings": emb_path.name,
        "gt": gt_path.name,
        "stride": 1,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return SynthResult(
        manifest_path=manifest_path, gt=gt, frames=frames,
        float_depths=float_depths,
    )


def spec_from_json(doc, scene_id=None) -> SynthSceneSpec:
    """Build a spec from its JSON form (see README for the schema)."""
    if isinstance(doc, (str, Path)):
        doc = json.loads(Path(doc).read_text())
    image = doc["image"]
    intr = intrinsics_from_fov(
        int(image["width"]), int(image["height"]), float(image["fov_deg"])
    )
    objects = []
    for o in doc["objects"]:
        if o["kind"] == "box":
            objects.append(
                Primitive("box", o["class"], tuple(o["center"]),
                          size=tuple(o["size"]))
            )
        else:
            objects.append(
                Primitive("sphere", o["class"], tuple(o["center"]),
                          radius=float(o["radius"]))
            )
    if "poses" in doc:
        poses = [Pose.from_matrix(np.array(p).reshape(4, 4)) for p in doc["poses"]]
    else:
        traj = doc["trajectory"]
        poses = arc_poses(
            traj["target"], traj["radius"], traj["height"], traj["count"],
            traj.get("start_deg", -25.0), traj.get("span_deg", 50.0),
        )
    return SynthSceneSpec(
        seed=int(doc.get("seed", 0)),
        room_extent=float(doc.get("room_extent", 8.0)),
        objects=objects,
        poses=poses,
        intrinsics=intr,
        depth_sigma=float(doc.get("depth_sigma", 0.0)),
        mask_dropout=float(doc.get("mask_dropout", 0.0)),
        scene_id=scene_id or doc.get("scene_id", "synth"),
    )
