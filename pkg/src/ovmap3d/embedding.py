"""Context-aware embedding aggregation over the five complementary crops.

For each mask five crops are defined: the masked object itself, its tight
bounding box, two context expansions of the box (x2.5 and x4), and a
surroundings crop (x3 expansion with the object blacked out). Their encoder
embeddings are combined with per-crop weights, the surroundings term entering
with a minus sign, and the result is L2-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ZeroNorm
from .masks import Mask2D

CROP_ORDER = ("mask", "bbox", "large", "huge", "surroundings")

SCALE_LARGE = 2.5
SCALE_HUGE = 4.0
SCALE_SURROUNDINGS = 3.0


@dataclass(frozen=True)
class CropSpec:
    """One crop: a pixel rect plus the zeroing rule applied inside it."""

    kind: str
    rect: tuple  # (x0, y0, x1, y1), half-open, clipped to the image
    zero_outside_mask: bool = False
    zero_inside_mask: bool = False

    def __post_init__(self):
        if self.kind not in CROP_ORDER:
            raise ValueError(f"unknown crop kind {self.kind!r}")
        x0, y0, x1, y1 = self.rect
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"empty crop rect {self.rect}")
        if self.kind == "mask" and not (
            self.zero_outside_mask and not self.zero_inside_mask
        ):
            raise ValueError("mask crop must zero outside the mask only")
        if self.kind == "surroundings" and not (
            self.zero_inside_mask and not self.zero_outside_mask
        ):
            raise ValueError("surroundings crop must zero inside the mask only")
        if self.kind in ("bbox", "large", "huge") and (
            self.zero_outside_mask or self.zero_inside_mask
        ):
            raise ValueError(f"{self.kind} crop must not zero any pixels")


def _scaled_rect(bbox, scale: float, width: int, height: int):
    """Scale a rect about its center, then clip to the image."""
    x0, y0, x1, y1 = bbox
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    half_w, half_h = (x1 - x0) * scale / 2.0, (y1 - y0) * scale / 2.0
    nx0 = max(0, int(np.floor(cx - half_w)))
    ny0 = max(0, int(np.floor(cy - half_h)))
    nx1 = min(width, int(np.ceil(cx + half_w)))
    ny1 = min(height, int(np.ceil(cy + half_h)))
    return (nx0, ny0, nx1, ny1)


def crop_rects(mask: Mask2D, image_dims=None):
    """The five crop specs for a mask, in canonical CROP_ORDER.

    ``image_dims`` is (W, H); defaults to the mask's own dimensions.
    """
    h, w = mask.shape
    if image_dims is not None:
        iw, ih = image_dims
        if (int(iw), int(ih)) != (w, h):
            raise ValueError(
                f"image_dims {image_dims} do not match mask shape {(w, h)}"
            )
    bbox = mask.bbox()
    return (
        CropSpec("mask", bbox, zero_outside_mask=True),
        CropSpec("bbox", bbox),
        CropSpec("large", _scaled_rect(bbox, SCALE_LARGE, w, h)),
        CropSpec("huge", _scaled_rect(bbox, SCALE_HUGE, w, h)),
        CropSpec(
            "surroundings",
            _scaled_rect(bbox, SCALE_SURROUNDINGS, w, h),
            zero_inside_mask=True,
        ),
    )


@dataclass(frozen=True)
class EmbeddingWeights:
    """Per-crop combination weights; the surroundings weight is subtracted."""

    w_mask: float = 0.4
    w_bbox: float = 0.3
    w_large: float = 0.2
    w_huge: float = 0.1
    w_sur: float = 0.15

    def __post_init__(self):
        vals = self.as_array()
        if not np.isfinite(vals).all():
            raise ValueError("weights must be finite")
        if self.w_sur < 0:
            raise ValueError("w_sur must be >= 0 (it is applied negatively)")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.w_mask, self.w_bbox, self.w_large, self.w_huge, self.w_sur]
        )


_SIGNS = np.array([1.0, 1.0, 1.0, 1.0, -1.0])


def aggregate_embedding(per_crop, weights: EmbeddingWeights) -> np.ndarray:
    """Weighted crop combination with subtracted surroundings, normalized.

    Raises ZeroNorm when the combination cancels below 1e-12, which signals
    degenerate weights or inputs rather than a representable embedding.
    """
    vecs = np.asarray(per_crop, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[0] != 5:
        raise ValueError(f"per_crop must be (5, d), got {vecs.shape}")
    if not np.isfinite(vecs).all():
        raise ValueError("crop embeddings must be finite")
    combo = (weights.as_array() * _SIGNS) @ vecs
    norm = float(np.linalg.norm(combo))
    if norm < 1e-12:
        raise ZeroNorm(f"combined embedding norm {norm:.3e}")
    return combo / norm


@dataclass
class ContextEmbedding:
    """Five per-crop vectors plus their aggregated unit descriptor."""

    per_crop: np.ndarray  # (5, d)
    aggregated: np.ndarray  # (d,), unit norm
    dim: int

    def __post_init__(self):
        self.per_crop = np.asarray(self.per_crop, dtype=np.float64)
        self.aggregated = np.asarray(self.aggregated, dtype=np.float64)
        if self.per_crop.shape != (5, self.dim):
            raise ValueError("per_crop must be (5, dim)")
        if self.aggregated.shape != (self.dim,):
            raise ValueError("aggregated must be (dim,)")
        if abs(np.linalg.norm(self.aggregated) - 1.0) > 1e-6:
            raise ValueError("aggregated embedding must be unit-norm")

    @classmethod
    def from_crops(cls, per_crop, weights: EmbeddingWeights):
        per_crop = np.asarray(per_crop, dtype=np.float64)
        agg = aggregate_embedding(per_crop, weights)
        return cls(per_crop=per_crop, aggregated=agg, dim=per_crop.shape[1])


class EmbeddingAggregator(BaseEstimator, TransformerMixin):
    """Transformer form of the crop aggregation for (n, 5, d) stacks."""

    def __init__(self, w_mask=0.4, w_bbox=0.3, w_large=0.2, w_huge=0.1,
                 w_sur=0.15):
        self.w_mask = w_mask
        self.w_bbox = w_bbox
        self.w_large = w_large
        self.w_huge = w_huge
        self.w_sur = w_sur

    def _weights(self) -> EmbeddingWeights:
        return EmbeddingWeights(
            self.w_mask, self.w_bbox, self.w_large, self.w_huge, self.w_sur
        )

    def fit(self, X=None, y=None):
        self._weights()  # validates
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != 5:
            raise ValueError(f"expected (n, 5, d) crop stack, got {X.shape}")
        w = self._weights()
        return np.stack([aggregate_embedding(row, w) for row in X])
