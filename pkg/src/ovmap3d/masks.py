"""2D instance masks: RLE storage, progressive multi-granularity selection,
small/marginal filtering, and density-based fragment splitting.

Granularity levels are ordered coarse to fine. A mask from a finer level is
admitted only when its overlap with everything already kept stays below that
level's threshold, so each level contributes novel object candidates instead
of redundant fragments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator

from .clustering import dbscan_labels
from .errors import Degenerate, FrameMismatch, ScheduleMismatch
from .validation import check_probability


def rle_encode(dense: np.ndarray) -> np.ndarray:
    """Encode a boolean image as (start, length) runs over the row-major flat
    index. Returns an (n, 2) uint32 array with sorted, non-adjacent runs."""
    flat = np.asarray(dense, dtype=bool).reshape(-1)
    if flat.size == 0:
        return np.empty((0, 2), dtype=np.uint32)
    padded = np.concatenate([[False], flat, [False]])
    changes = np.flatnonzero(padded[1:] != padded[:-1])
    starts = changes[0::2]
    lengths = changes[1::2] - starts
    return np.stack([starts, lengths], axis=1).astype(np.uint32)


def rle_decode_flat(runs: np.ndarray, size: int) -> np.ndarray:
    """Expand runs back to sorted flat pixel indices (int64)."""
    runs = np.asarray(runs, dtype=np.int64)
    if runs.size == 0:
        return np.empty(0, dtype=np.int64)
    out = np.concatenate(
        [np.arange(s, s + ln, dtype=np.int64) for s, ln in runs]
    )
    if out.size and (out[0] < 0 or out[-1] >= size):
        raise ValueError("runs exceed image bounds")
    return out


@dataclass
class Mask2D:
    """A binary pixel region of one frame at one granularity level.

    Pixels are stored run-length encoded over the row-major flattened image,
    which makes equality independent of construction order.
    """

    frame_id: int
    shape: tuple  # (H, W)
    runs: np.ndarray
    granularity_level: int
    _flat: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.runs = np.asarray(self.runs, dtype=np.uint32).reshape(-1, 2)
        h, w = self.shape
        self.shape = (int(h), int(w))
        if self.area == 0:
            raise ValueError("mask must contain at least one pixel")
        starts = self.runs[:, 0].astype(np.int64)
        ends = starts + self.runs[:, 1].astype(np.int64)
        if np.any(np.diff(starts) <= 0) or np.any(ends[:-1] > starts[1:]):
            raise ValueError("runs must be sorted and non-overlapping")
        if ends[-1] > h * w:
            raise ValueError("runs exceed image bounds")

    @classmethod
    def from_dense(cls, frame_id: int, dense, granularity_level: int = 1):
        dense = np.asarray(dense, dtype=bool)
        return cls(frame_id, dense.shape, rle_encode(dense), granularity_level)

    @classmethod
    def from_flat_indices(cls, frame_id, shape, flat, granularity_level=1):
        h, w = shape
        dense = np.zeros(h * w, dtype=bool)
        dense[np.asarray(flat, dtype=np.int64)] = True
        return cls(frame_id, (h, w), rle_encode(dense), granularity_level)

    @property
    def area(self) -> int:
        return int(self.runs[:, 1].astype(np.int64).sum())

    def flat_indices(self) -> np.ndarray:
        if self._flat is None:
            h, w = self.shape
            self._flat = rle_decode_flat(self.runs, h * w)
        return self._flat

    def pixel_coords(self):
        """(rows, cols) arrays of the mask pixels."""
        flat = self.flat_indices()
        w = self.shape[1]
        return flat // w, flat % w

    def dense(self) -> np.ndarray:
        h, w = self.shape
        out = np.zeros(h * w, dtype=bool)
        out[self.flat_indices()] = True
        return out.reshape(h, w)

    def bbox(self):
        """Tight bounds as a half-open rect (x0, y0, x1, y1)."""
        rows, cols = self.pixel_coords()
        return (
            int(cols.min()),
            int(rows.min()),
            int(cols.max()) + 1,
            int(rows.max()) + 1,
        )

    def first_pixel(self) -> int:
        return int(self.runs[0, 0])


@dataclass(frozen=True)
class GranularitySchedule:
    """Per-level overlap thresholds and the shared filtering knobs."""

    levels: tuple
    thresholds: tuple
    min_area: int = 1
    dbscan_eps_px: float = 3.0
    dbscan_min_pts: int = 8

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(
            self, "thresholds", tuple(float(t) for t in self.thresholds)
        )
        if len(self.levels) != len(self.thresholds):
            raise ScheduleMismatch(
                f"{len(self.levels)} levels vs {len(self.thresholds)} thresholds"
            )
        if list(self.levels) != sorted(self.levels) or len(
            set(self.levels)
        ) != len(self.levels):
            raise ValueError("levels must be strictly increasing")
        for t in self.thresholds:
            check_probability(t, "threshold")
        if self.min_area < 1:
            raise ValueError("min_area must be >= 1")


def overlap_ratio(m: Mask2D, m_prime: Mask2D) -> float:
    """Shared pixel count divided by area(m).

    Asymmetric by construction: the denominator is the first argument.
    """
    if m.frame_id != m_prime.frame_id or m.shape != m_prime.shape:
        raise FrameMismatch(
            f"masks from frame {m.frame_id}{m.shape} vs "
            f"{m_prime.frame_id}{m_prime.shape}"
        )
    inter = np.intersect1d(
        m.flat_indices(), m_prime.flat_indices(), assume_unique=True
    ).size
    return inter / m.area


def _level_order(masks):
    # stable processing order: descending area, ties by first-pixel index
    return sorted(masks, key=lambda m: (-m.area, m.first_pixel()))


def progressive_select(levels, schedule: GranularitySchedule):
    """Coarse-to-fine mask selection.

    A mask at level k is kept only when its maximum overlap ratio against
    every previously kept mask stays below tau_k. Previously kept covers all
    coarser levels and, for duplicate suppression, earlier masks of the same
    level under the documented (descending area) order.
    """
    if len(levels) != len(schedule.thresholds):
        raise ScheduleMismatch(
            f"{len(levels)} level sets vs {len(schedule.thresholds)} thresholds"
        )
    kept: list[Mask2D] = []
    for tau, level_masks in zip(schedule.thresholds, levels):
        for mask in _level_order(level_masks):
            if kept:
                worst = max(overlap_ratio(mask, km) for km in kept)
                if worst >= tau:
                    continue
            kept.append(mask)
    return kept


def filter_small(masks, min_area: int, margin_px: int = 1):
    """Drop masks that are tiny or whose bounding box hugs the image border."""
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    out = []
    for m in masks:
        if m.area < min_area:
            continue
        x0, y0, x1, y1 = m.bbox()
        h, w = m.shape
        if (
            x0 < margin_px
            or y0 < margin_px
            or x1 > w - margin_px
            or y1 > h - margin_px
        ):
            continue
        out.append(m)
    return out


# masks above this pixel count are clustered on a stride-2 subgrid; the
# remaining pixels inherit the label of their nearest sampled pixel, which
# can shift cluster boundaries by up to the stride
SUBSAMPLE_AREA = 50_000
SUBSAMPLE_STRIDE = 2


def split_fragments_2d(mask: Mask2D, eps_px: float, min_pts: int):
    """Split a mask into its density-connected pixel components.

    Fragments closer than ``eps_px`` merge into one component; separated
    components become separate masks; noise pixels are discarded. Raises
    Degenerate when everything is noise.
    """
    rows, cols = mask.pixel_coords()
    pts = np.stack([cols, rows], axis=1).astype(np.float64)

    if mask.area > SUBSAMPLE_AREA:
        sel = (rows % SUBSAMPLE_STRIDE == 0) & (cols % SUBSAMPLE_STRIDE == 0)
        if not sel.any():
            sel = np.ones(len(rows), dtype=bool)
        sample_labels = dbscan_labels(pts[sel], eps_px, min_pts)
        tree = cKDTree(pts[sel])
        _, nearest = tree.query(pts)
        labels = sample_labels[nearest]
    else:
        labels = dbscan_labels(pts, eps_px, min_pts)

    n_clusters = labels.max() + 1 if labels.size else 0
    if n_clusters <= 0:
        raise Degenerate("all pixels classified as noise")

    flat = mask.flat_indices()
    pieces = []
    for c in range(n_clusters):
        member = flat[labels == c]
        pieces.append(
            Mask2D.from_flat_indices(
                mask.frame_id, mask.shape, member, mask.granularity_level
            )
        )
    pieces.sort(key=lambda m: (-m.area, m.first_pixel()))
    return pieces


class MaskRefiner(BaseEstimator):
    """Stateless transformer running the full 2D refinement chain.

    transform() expects one frame's mask sets grouped per granularity level,
    ordered coarse to fine, and returns the refined mask list: progressive
    selection, then small/marginal filtering, then fragment splitting.
    """

    def __init__(
        self,
        thresholds=(1.0, 0.5, 0.3),
        min_area_frac=0.0005,
        margin_px=1,
        eps_px=3.0,
        min_pts=8,
    ):
        self.thresholds = thresholds
        self.min_area_frac = min_area_frac
        self.margin_px = margin_px
        self.eps_px = eps_px
        self.min_pts = min_pts

    def fit(self, X=None, y=None):
        return self

    def transform(self, levels):
        levels = [list(lv) for lv in levels]
        all_masks = [m for lv in levels for m in lv]
        if not all_masks:
            return []
        h, w = all_masks[0].shape
        min_area = max(1, round(self.min_area_frac * h * w))
        taus = tuple(self.thresholds)
        if len(taus) > len(levels):
            taus = taus[: len(levels)]
        schedule = GranularitySchedule(
            levels=tuple(range(1, len(levels) + 1)),
            thresholds=taus,
            min_area=min_area,
            dbscan_eps_px=self.eps_px,
            dbscan_min_pts=self.min_pts,
        )
        selected = progressive_select(levels, schedule)
        selected = filter_small(selected, min_area, self.margin_px)
        refined = []
        for m in selected:
            try:
                refined.extend(split_fragments_2d(m, self.eps_px, self.min_pts))
            except Degenerate:
                continue
        return refined
