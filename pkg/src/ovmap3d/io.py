"""On-disk formats, scene manifests, and loaders.

Binary layouts (all little-endian):

* depth ``OVDM``: magic, u16 version, u32 H, u32 W, f32 scale, then H*W u16
  values storing ``round(depth_m * scale)`` with 0 marking invalid;
* mask archive ``OVMK``: magic, u16 version, u32 count, then per record
  u32 frame_id, u16 granularity level, u32 H, u32 W, u32 n_runs and the
  (start, length) u32 run pairs over the row-major flat index;
* embedding archive ``OVEM``: magic, u16 version, u32 dim, u32 count,
  length-prefixed crop-order string, then per mask 5*dim f32 values;
* ground-truth points ``OVGP``: magic, u16 version, u64 count, then per
  point 3 f32 coordinates and a u32 instance index;
* object map ``OVOM``: magic, u16 version, 32 ascii config-hash chars,
  f32 voxel size, u32 embedding dim, u32 object count, then per object
  u32 id, u32 n_points, u32 n_sources, the f32 point triples, the f32
  embedding, and (frame_id, mask_index) u32 source pairs.

Poses are 4x4 row-major camera-to-world matrices in plain text. Loaders
check magic and version before anything else and never reinterpret silently.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .embedding import CROP_ORDER
from .errors import CountMismatch, FormatError, ManifestError
from .fusion import Object3D
from .geometry import Box3, Frame, Intrinsics, Pose, voxelize
from .masks import Mask2D

FORMAT_VERSION = 1

MAGIC_DEPTH = b"OVDM"
MAGIC_MASKS = b"OVMK"
MAGIC_EMBED = b"OVEM"
MAGIC_GTPTS = b"OVGP"
MAGIC_OBJMAP = b"OVOM"


class _Reader:
    """Binary reader that reports the byte offset of any failure."""

    def __init__(self, path):
        self.path = Path(path)
        self.fh = open(path, "rb")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.fh.close()

    def take(self, n: int) -> bytes:
        offset = self.fh.tell()
        data = self.fh.read(n)
        if len(data) != n:
            raise FormatError(
                self.path, offset, f"expected {n} bytes, got {len(data)}"
            )
        return data

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def expect_magic(self, magic: bytes):
        got = self.take(4)
        if got != magic:
            raise FormatError(
                self.path, 0, f"bad magic {got!r}, expected {magic!r}"
            )
        (version,) = self.unpack("H")
        if version != FORMAT_VERSION:
            raise FormatError(
                self.path, 4, f"unsupported version {version}"
            )

    def array(self, dtype, count):
        raw = self.take(int(count) * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).copy()

    def at_end(self) -> bool:
        offset = self.fh.tell()
        extra = self.fh.read(1)
        if extra:
            raise FormatError(self.path, offset, "trailing bytes")
        return True


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<H", FORMAT_VERSION)


# --- depth ---------------------------------------------------------------

def write_depth(path, depth_m, scale: float = 1000.0):
    depth = np.asarray(depth_m, dtype=np.float64)
    h, w = depth.shape
    values = np.where(
        np.isfinite(depth) & (depth > 0),
        np.round(depth * scale),
        0.0,
    )
    values = np.clip(values, 0, 65535).astype("<u2")
    with open(path, "wb") as fh:
        fh.write(_header(MAGIC_DEPTH))
        fh.write(struct.pack("<IIf", h, w, float(scale)))
        fh.write(values.tobytes())


def read_depth(path):
    """Returns (depth_m float64 array with 0 = invalid, scale)."""
    with _Reader(path) as r:
        r.expect_magic(MAGIC_DEPTH)
        h, w, scale = r.unpack("IIf")
        values = r.array("<u2", h * w).reshape(h, w)
        r.at_end()
    return values.astype(np.float64) / scale, float(scale)


# --- poses ---------------------------------------------------------------

def write_pose_text(path, pose: Pose):
    m = pose.matrix
    lines = [" ".join(f"{x:.17g}" for x in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_text(path) -> Pose:
    values = []
    for token in Path(path).read_text().split():
        values.append(float(token))
    if len(values) != 16:
        raise FormatError(path, 0, f"expected 16 floats, got {len(values)}")
    return Pose.from_matrix(np.array(values).reshape(4, 4))


# --- mask archive --------------------------------------------------------

def write_masks(path, masks):
    masks = list(masks)
    with open(path, "wb") as fh:
        fh.write(_header(MAGIC_MASKS))
        fh.write(struct.pack("<I", len(masks)))
        for m in masks:
            h, w = m.shape
            runs = np.ascontiguousarray(m.runs, dtype="<u4")
            fh.write(
                struct.pack(
                    "<IHIII", m.frame_id, m.granularity_level, h, w, len(runs)
                )
            )
            fh.write(runs.tobytes())


def read_masks(path):
    out = []
    with _Reader(path) as r:
        r.expect_magic(MAGIC_MASKS)
        (count,) = r.unpack("I")
        for _ in range(count):
            frame_id, level, h, w, n_runs = r.unpack("IHIII")
            runs = r.array("<u4", n_runs * 2).reshape(n_runs, 2)
            out.append(Mask2D(frame_id, (h, w), runs, level))
        r.at_end()
    return out


# --- embedding archive ---------------------------------------------------

def write_embeddings(path, per_crop):
    """``per_crop`` is a (count, 5, dim) array of crop embeddings."""
    arr = np.asarray(per_crop, dtype="<f4")
    if arr.ndim != 3 or arr.shape[1] != 5:
        raise ValueError(f"expected (count, 5, dim), got {arr.shape}")
    order = ",".join(CROP_ORDER).encode()
    with open(path, "wb") as fh:
        fh.write(_header(MAGIC_EMBED))
        fh.write(struct.pack("<II", arr.shape[2], arr.shape[0]))
        fh.write(struct.pack("<H", len(order)))
        fh.write(order)
        fh.write(arr.tobytes())


def read_embeddings(path):
    with _Reader(path) as r:
        r.expect_magic(MAGIC_EMBED)
        dim, count = r.unpack("II")
        (order_len,) = r.unpack("H")
        order = r.take(order_len).decode()
        if order != ",".join(CROP_ORDER):
            raise FormatError(path, 14, f"unexpected crop order {order!r}")
        arr = r.array("<f4", count * 5 * dim).reshape(count, 5, dim)
        r.at_end()
    return arr.astype(np.float64)


# --- ground truth --------------------------------------------------------

@dataclass
class InstanceGT:
    id: int
    class_index: int
    box: Box3
    centroid: np.ndarray


@dataclass
class SceneGroundTruth:
    classes: tuple
    instances: list
    points: np.ndarray  # (n, 3)
    point_instance: np.ndarray  # (n,) instance index

    def class_of_instance(self, inst_idx: int) -> str:
        return self.classes[self.instances[inst_idx].class_index]

    def point_labels(self):
        """[(point, class_name), ...] for metric evaluation."""
        return [
            (self.points[i], self.classes[
                self.instances[self.point_instance[i]].class_index
            ])
            for i in range(len(self.points))
        ]


def write_ground_truth(json_path, gt: SceneGroundTruth, points_name=None):
    json_path = Path(json_path)
    points_name = points_name or (json_path.stem + "_points.ovgp")
    points_path = json_path.parent / points_name
    record = np.dtype([("xyz", "<f4", 3), ("instance", "<u4")])
    rows = np.empty(len(gt.points), dtype=record)
    rows["xyz"] = gt.points
    rows["instance"] = gt.point_instance
    with open(points_path, "wb") as fh:
        fh.write(_header(MAGIC_GTPTS))
        fh.write(struct.pack("<Q", len(gt.points)))
        fh.write(rows.tobytes())
    doc = {
        "classes": list(gt.classes),
        "instances": [
            {
                "id": inst.id,
                "class_index": inst.class_index,
                "box": [*inst.box.min_corner, *inst.box.max_corner],
                "centroid": list(inst.centroid),
            }
            for inst in gt.instances
        ],
        "points_file": points_name,
    }
    json_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_ground_truth(json_path) -> SceneGroundTruth:
    json_path = Path(json_path)
    try:
        doc = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(json_path, exc.pos, exc.msg) from exc
    instances = [
        InstanceGT(
            id=int(i["id"]),
            class_index=int(i["class_index"]),
            box=Box3(np.array(i["box"][:3]), np.array(i["box"][3:])),
            centroid=np.asarray(i["centroid"], dtype=np.float64),
        )
        for i in doc["instances"]
    ]
    points_path = json_path.parent / doc["points_file"]
    record = np.dtype([("xyz", "<f4", 3), ("instance", "<u4")])
    with _Reader(points_path) as r:
        r.expect_magic(MAGIC_GTPTS)
        (count,) = r.unpack("Q")
        rows = r.array(record, count)
        r.at_end()
    pts = rows["xyz"].astype(np.float64)
    idx = rows["instance"].astype(np.int64)
    return SceneGroundTruth(
        classes=tuple(doc["classes"]),
        instances=instances,
        points=pts,
        point_instance=idx,
    )


# --- object map ----------------------------------------------------------

def write_object_map(path, objects, config_hash: str, voxel_size: float):
    objects = list(objects)
    dim = objects[0].embedding.shape[0] if objects else 0
    if len(config_hash) != 32:
        raise ValueError("config hash must be 32 hex chars")
    with open(path, "wb") as fh:
        fh.write(_header(MAGIC_OBJMAP))
        fh.write(config_hash.encode("ascii"))
        fh.write(struct.pack("<fII", float(voxel_size), dim, len(objects)))
        for obj in objects:
            pts = np.ascontiguousarray(obj.points, dtype="<f4")
            emb = np.ascontiguousarray(obj.embedding, dtype="<f4")
            fh.write(
                struct.pack("<III", obj.id, len(pts), len(obj.source_masks))
            )
            fh.write(pts.tobytes())
            fh.write(emb.tobytes())
            for frame_id, mask_idx in obj.source_masks:
                fh.write(struct.pack("<II", frame_id, mask_idx))


def read_object_map(path):
    """Returns (objects, config_hash, voxel_size).

    Loaded objects carry no per-member embeddings (the file stores only the
    averaged descriptor), so they cannot be re-merged, only queried.
    """
    with _Reader(path) as r:
        r.expect_magic(MAGIC_OBJMAP)
        config_hash = r.take(32).decode("ascii")
        voxel_size, dim, count = r.unpack("fII")
        objects = []
        for _ in range(count):
            obj_id, n_points, n_sources = r.unpack("III")
            pts = r.array("<f4", n_points * 3).reshape(n_points, 3)
            emb = r.array("<f4", dim)
            sources = [tuple(r.unpack("II")) for _ in range(n_sources)]
            pts64 = pts.astype(np.float64)
            objects.append(
                Object3D(
                    id=obj_id,
                    points=pts64,
                    voxels=voxelize(pts64, voxel_size),
                    embedding=emb.astype(np.float64),
                    source_masks=sources,
                )
            )
        r.at_end()
    return objects, config_hash, float(voxel_size)


# --- portable graymap (rgb stand-in for synthetic scenes) -----------------

def write_pgm(path, gray_u8):
    arr = np.asarray(gray_u8, dtype=np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(arr.tobytes())


# --- scene manifest ------------------------------------------------------

@dataclass
class SceneManifest:
    scene_id: str
    intrinsics: Intrinsics
    frames: list  # [{"id", "depth", "pose", "rgb"?}, ...]
    masks_path: Path
    embeddings_path: Path
    gt_path: Path | None
    root: Path
    stride: int = 1


@dataclass
class Scene:
    manifest: SceneManifest
    frames: list
    masks: list
    crop_embeddings: np.ndarray  # (count, 5, dim)
    gt: SceneGroundTruth | None


def load_manifest(path) -> SceneManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc.msg})") from exc
    root = path.parent
    try:
        intr = Intrinsics(**doc["intrinsics"])
        frames = doc["frames"]
        ids = [f["id"] for f in frames]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: missing field {exc}") from exc
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{path}: duplicate frame ids")
    if ids != sorted(ids):
        raise ManifestError(f"{path}: frame ids must be listed sorted")
    manifest = SceneManifest(
        scene_id=str(doc.get("scene_id", path.parent.name)),
        intrinsics=intr,
        frames=frames,
        masks_path=root / doc["masks"],
        embeddings_path=root / doc["embeddings"],
        gt_path=(root / doc["gt"]) if doc.get("gt") else None,
        root=root,
        stride=int(doc.get("stride", 1)),
    )
    required = [manifest.masks_path, manifest.embeddings_path]
    if manifest.gt_path:
        required.append(manifest.gt_path)
    for f in frames:
        required.append(root / f["depth"])
        required.append(root / f["pose"])
        if f.get("rgb"):
            required.append(root / f["rgb"])
    for req in required:
        if not Path(req).exists():
            raise ManifestError(f"{path}: referenced file missing: {req}")
    return manifest


def load_scene(manifest_path) -> Scene:
    mf = load_manifest(manifest_path)
    frames = []
    for entry in mf.frames:
        depth, _ = read_depth(mf.root / entry["depth"])
        pose = read_pose_text(mf.root / entry["pose"])
        rgb = str(mf.root / entry["rgb"]) if entry.get("rgb") else None
        frames.append(
            Frame(
                id=int(entry["id"]),
                depth=depth,
                intrinsics=mf.intrinsics,
                pose=pose,
                rgb_path=rgb,
            )
        )
    masks = read_masks(mf.masks_path)
    embeddings = read_embeddings(mf.embeddings_path)
    if len(masks) != len(embeddings):
        raise CountMismatch(
            f"{mf.masks_path} has {len(masks)} masks but "
            f"{mf.embeddings_path} has {len(embeddings)} embedding records"
        )
    dims = (mf.intrinsics.height, mf.intrinsics.width)
    frame_ids = {f.id for f in frames}
    for m in masks:
        if m.shape != dims:
            raise ManifestError(
                f"mask of frame {m.frame_id} is {m.shape}, scene is {dims}"
            )
        if m.frame_id not in frame_ids:
            raise ManifestError(f"mask references unknown frame {m.frame_id}")
    gt = read_ground_truth(mf.gt_path) if mf.gt_path else None
    return Scene(
        manifest=mf,
        frames=frames,
        masks=masks,
        crop_embeddings=embeddings,
        gt=gt,
    )


def write_config(path, config: PipelineConfig):
    Path(path).write_text(config.to_text())
