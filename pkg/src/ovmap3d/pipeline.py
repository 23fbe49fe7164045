"""End-to-end glue: scene files in, refined masks and fused objects out.

Keeps the provenance chain between archive records and refined masks so each
refined mask (including split fragments, which inherit their parent's crop
embeddings) is paired with the right embedding block.
"""

from __future__ import annotations

from .config import PipelineConfig
from .embedding import ContextEmbedding
from .errors import Degenerate, ScheduleMismatch
from .fusion import fuse_scene
from .masks import (
    GranularitySchedule,
    filter_small,
    progressive_select,
    split_fragments_2d,
)


def refine_frame_masks(masks_with_index, schedule: GranularitySchedule,
                       margin_px: int):
    """Run the refinement chain for one frame.

    ``masks_with_index`` pairs each raw mask with its archive record index.
    Returns [(refined mask, archive index), ...]; split fragments keep their
    parent's index.
    """
    if not masks_with_index:
        return []
    index_of = {id(m): i for m, i in masks_with_index}
    beyond = {m.granularity_level for m, _ in masks_with_index} - set(
        schedule.levels
    )
    if beyond:
        raise ScheduleMismatch(
            f"archive levels {sorted(beyond)} not covered by the schedule"
        )
    levels = [
        [m for m, _ in masks_with_index if m.granularity_level == lv]
        for lv in schedule.levels
    ]
    selected = progressive_select(levels, schedule)
    selected = filter_small(selected, schedule.min_area, margin_px)
    refined = []
    for mask in selected:
        try:
            pieces = split_fragments_2d(
                mask, schedule.dbscan_eps_px, schedule.dbscan_min_pts
            )
        except Degenerate:
            continue
        for piece in pieces:
            refined.append((piece, index_of[id(mask)]))
    return refined


def refine_and_embed(scene, config: PipelineConfig):
    """(frames, per_frame) ready for fuse_scene, from a loaded scene."""
    intr = scene.manifest.intrinsics
    min_area = max(1, round(config.min_area_frac * intr.width * intr.height))
    weights = config.weights()

    by_frame = {}
    for idx, mask in enumerate(scene.masks):
        by_frame.setdefault(mask.frame_id, []).append((mask, idx))

    top_level = max((m.granularity_level for m in scene.masks), default=1)
    if top_level > len(config.taus):
        raise ScheduleMismatch(
            f"archive uses granularity level {top_level} but only "
            f"{len(config.taus)} thresholds are configured"
        )
    schedule = GranularitySchedule(
        levels=tuple(range(1, top_level + 1)),
        thresholds=tuple(config.taus)[:top_level],
        min_area=min_area,
        dbscan_eps_px=config.dbscan_eps_px,
        dbscan_min_pts=config.dbscan_min_pts_2d,
    )

    frames = sorted(scene.frames, key=lambda f: f.id)
    per_frame = []
    for frame in frames:
        refined = refine_frame_masks(
            by_frame.get(frame.id, []), schedule, config.margin_px
        )
        pairs = []
        for mask, archive_idx in refined:
            emb = ContextEmbedding.from_crops(
                scene.crop_embeddings[archive_idx], weights
            )
            pairs.append((mask, emb))
        per_frame.append(pairs)
    return frames, per_frame


def fuse_from_scene(scene, config: PipelineConfig, re_embed=None,
                    stats=None):
    """Refine, aggregate, and fuse a loaded scene into 3D objects."""
    frames, per_frame = refine_and_embed(scene, config)
    return fuse_scene(
        frames, per_frame, config.fusion_params(), re_embed=re_embed,
        _stats=stats,
    )
