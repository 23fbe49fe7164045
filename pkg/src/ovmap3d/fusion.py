"""Lifting 2D masks to 3D and consolidating them into scene objects.

Each refined mask is back-projected to a point set, split into spatially
coherent clusters, and the resulting candidates are merged greedily whenever
two of them pass the symmetric-balanced overlap test: both directed
intersection-over-volume ratios must exceed ``gamma`` and their absolute
difference must stay below ``delta``. The asymmetry bound is what keeps a
small object resting on a large one (a cushion on a couch) from being
swallowed, because containment makes one ratio near 1 and the other tiny.

Merged objects carry the union point cloud and the re-normalized arithmetic
mean of every member mask's embedding. Members are summed in sorted source
order so the result does not depend on the association order of the merges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .clustering import dbscan_labels
from .embedding import ContextEmbedding
from .errors import (
    AllInvalidDepth,
    AllNoise,
    EmptyInput,
    FrameMismatch,
    ZeroNorm,
)
from .geometry import Box3, Frame, VoxelSet, back_project_pixels, voxel_iov, voxelize
from .masks import Mask2D
from .validation import as_points, check_probability, check_positive


@dataclass(frozen=True)
class FusionParams:
    """Merge thresholds and 3D refinement knobs."""

    gamma: float = 0.25
    delta: float = 0.5
    voxel_size: float = 0.05
    dbscan_eps_m: float = 0.1
    dbscan_min_pts: int = 10

    def __post_init__(self):
        check_probability(self.gamma, "gamma")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        check_probability(self.delta, "delta")
        check_positive(self.voxel_size, "voxel_size")
        check_positive(self.dbscan_eps_m, "dbscan_eps_m")
        if self.dbscan_min_pts < 1:
            raise ValueError("dbscan_min_pts must be >= 1")


@dataclass
class Object3D:
    """A fused 3D instance: points, voxel occupancy, averaged embedding."""

    id: int
    points: np.ndarray
    voxels: VoxelSet
    embedding: np.ndarray
    source_masks: list  # [(frame_id, mask_index), ...] one per member mask
    member_embeddings: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.points = as_points(self.points, "points")
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        if abs(np.linalg.norm(self.embedding) - 1.0) > 1e-6:
            raise ValueError("object embedding must be unit-norm")
        self.source_masks = [tuple(map(int, s)) for s in self.source_masks]
        if self.member_embeddings is not None:
            self.member_embeddings = np.asarray(
                self.member_embeddings, dtype=np.float64
            )
            if len(self.member_embeddings) != len(self.source_masks):
                raise ValueError("one member embedding per source mask")

    @classmethod
    def build(cls, obj_id, points, voxel_size, sources, member_embeddings):
        """Construct with voxels derived from points and the embedding
        recomputed as the normalized mean over member embeddings."""
        points = as_points(points)
        members = np.asarray(member_embeddings, dtype=np.float64)
        emb = mean_embedding(sources, members)
        return cls(
            id=obj_id,
            points=points,
            voxels=voxelize(points, voxel_size),
            embedding=emb,
            source_masks=list(sources),
            member_embeddings=members,
        )

    @property
    def merged_count(self) -> int:
        return len(self.source_masks)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @property
    def box(self) -> Box3:
        return Box3.of_points(self.points)


def mean_embedding(sources, member_embeddings) -> np.ndarray:
    """Normalized arithmetic mean of member embeddings.

    Members are accumulated in ascending (frame_id, mask_index) order so the
    floating-point result is independent of merge association order.
    """
    members = np.asarray(member_embeddings, dtype=np.float64)
    if members.ndim != 2 or len(members) == 0:
        raise EmptyInput("member embeddings must be a non-empty (n, d) array")
    order = sorted(range(len(sources)), key=lambda i: tuple(sources[i]))
    total = np.zeros(members.shape[1])
    for i in order:
        total = total + members[i]
    mean = total / len(members)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise ZeroNorm("member embeddings cancel to zero mean")
    return mean / norm


def lift_mask(mask: Mask2D, frame: Frame) -> np.ndarray:
    """Back-project every mask pixel with a valid depth to world points."""
    if mask.frame_id != frame.id:
        raise FrameMismatch(
            f"mask belongs to frame {mask.frame_id}, got frame {frame.id}"
        )
    rows, cols = mask.pixel_coords()
    depths = frame.depth[rows, cols]
    valid = np.isfinite(depths) & (depths > 0)
    if not valid.any():
        raise AllInvalidDepth(
            f"mask on frame {frame.id} has no valid-depth pixel"
        )
    return back_project_pixels(cols[valid], rows[valid], depths[valid], frame)


def try_merge(a: Object3D, b: Object3D, params: FusionParams) -> bool:
    """Symmetric-balanced overlap test on the two voxel occupancies."""
    iov_ab, iov_ba = voxel_iov(a.voxels, b.voxels)
    return (
        iov_ab > params.gamma
        and iov_ba > params.gamma
        and abs(iov_ab - iov_ba) < params.delta
    )


def merge_objects(objs) -> Object3D:
    """Merge objects: concatenated points, re-voxelized occupancy, and the
    normalized mean embedding over all original member masks."""
    objs = list(objs)
    if not objs:
        raise EmptyInput("nothing to merge")
    if len(objs) == 1:
        return objs[0]
    for o in objs:
        if o.member_embeddings is None:
            raise ValueError(
                "objects loaded without member embeddings cannot be re-merged"
            )
    points = np.concatenate([o.points for o in objs], axis=0)
    sources = [s for o in objs for s in o.source_masks]
    members = np.concatenate([o.member_embeddings for o in objs], axis=0)
    return Object3D.build(
        obj_id=objs[0].id,
        points=points,
        voxel_size=objs[0].voxels.voxel_size,
        sources=sources,
        member_embeddings=members,
    )


def split_3d(points, params: FusionParams):
    """Partition points into density clusters; noise is dropped.

    Clusters come back ordered by descending size, ties by the smallest
    original point index. Raises AllNoise when no cluster survives.
    """
    pts = as_points(points)
    labels = dbscan_labels(pts, params.dbscan_eps_m, params.dbscan_min_pts)
    n_clusters = int(labels.max()) + 1 if labels.size else 0
    if n_clusters <= 0:
        raise AllNoise("3D clustering found only noise")
    clusters = []
    for c in range(n_clusters):
        idx = np.flatnonzero(labels == c)
        clusters.append((idx.size, int(idx[0]), pts[idx]))
    clusters.sort(key=lambda t: (-t[0], t[1]))
    return [c[2] for c in clusters]


def fuse_scene(frames, per_frame, params: FusionParams, re_embed=None,
               _stats=None):
    """Full scene fusion: lift, split, and merge to a pairwise fixpoint.

    ``frames`` and ``per_frame`` are parallel sequences; each per-frame entry
    lists (Mask2D, ContextEmbedding) pairs. Candidates are processed in
    ascending (frame_id, mask_index) order regardless of the input order, so
    the output is identical under any permutation of the frames.

    ``re_embed(frame, points)`` may supply a fresh embedding for a split-off
    cluster; when absent (the file-driven default) children inherit the
    parent mask's aggregated embedding.

    The returned objects satisfy the fixpoint property: no remaining pair
    passes :func:`try_merge`.
    """
    if len(frames) != len(per_frame):
        raise ValueError("frames and per_frame must have equal length")
    order = sorted(range(len(frames)), key=lambda i: frames[i].id)

    candidates = []  # [(key, Object3D)]
    total_lifted = 0
    noise_points = 0
    for i in order:
        frame = frames[i]
        for mask_idx, (mask, emb) in enumerate(per_frame[i]):
            pts = lift_mask(mask, frame)
            total_lifted += len(pts)
            try:
                clusters = split_3d(pts, params)
            except AllNoise:
                noise_points += len(pts)
                continue
            noise_points += len(pts) - sum(len(c) for c in clusters)
            parent_vec = (
                emb.aggregated if isinstance(emb, ContextEmbedding) else
                np.asarray(emb, dtype=np.float64)
            )
            for rank, cluster in enumerate(clusters):
                vec = None
                if re_embed is not None:
                    vec = re_embed(frame, cluster)
                if vec is None:
                    vec = parent_vec
                key = (frame.id, mask_idx, rank)
                candidates.append(
                    (
                        key,
                        Object3D.build(
                            obj_id=len(candidates),
                            points=cluster,
                            voxel_size=params.voxel_size,
                            sources=[(frame.id, mask_idx)],
                            member_embeddings=[vec],
                        ),
                    )
                )

    candidates.sort(key=lambda kv: kv[0])

    # greedy merge to fixpoint: scan pairs in canonical order, merge the
    # first passing pair, restart; terminates because each merge shrinks the
    # candidate list
    merged = True
    while merged:
        merged = False
        n = len(candidates)
        for i in range(n):
            for j in range(i + 1, n):
                if try_merge(candidates[i][1], candidates[j][1], params):
                    key = min(candidates[i][0], candidates[j][0])
                    new = merge_objects([candidates[i][1], candidates[j][1]])
                    candidates[i] = (key, new)
                    del candidates[j]
                    merged = True
                    break
            if merged:
                break

    objects = []
    for new_id, (_, obj) in enumerate(candidates):
        obj.id = new_id
        objects.append(obj)

    if _stats is not None:
        _stats["total_lifted_points"] = total_lifted
        _stats["noise_points"] = noise_points
        _stats["output_points"] = int(sum(len(o.points) for o in objects))
    return objects


class SceneFuser(BaseEstimator):
    """Estimator wrapper around :func:`fuse_scene`.

    fit() consumes frames plus their per-frame (mask, embedding) pairs and
    exposes the fused map as ``objects_`` along with point bookkeeping.
    """

    def __init__(self, gamma=0.25, delta=0.5, voxel_size=0.05,
                 dbscan_eps_m=0.1, dbscan_min_pts=10):
        self.gamma = gamma
        self.delta = delta
        self.voxel_size = voxel_size
        self.dbscan_eps_m = dbscan_eps_m
        self.dbscan_min_pts = dbscan_min_pts

    def params_(self) -> FusionParams:
        return FusionParams(
            gamma=self.gamma,
            delta=self.delta,
            voxel_size=self.voxel_size,
            dbscan_eps_m=self.dbscan_eps_m,
            dbscan_min_pts=self.dbscan_min_pts,
        )

    def fit(self, frames, per_frame, re_embed=None):
        stats = {}
        self.objects_ = fuse_scene(
            frames, per_frame, self.params_(), re_embed=re_embed, _stats=stats
        )
        self.total_lifted_points_ = stats["total_lifted_points"]
        self.noise_points_ = stats["noise_points"]
        return self
