"""Open-vocabulary label assignment and segmentation metrics.

Objects are labeled by cosine similarity between their fused embedding and
per-class text-prompt embeddings ("a photo of <class>."); evaluation
transfers labels through nearest-centroid matching and reports mean accuracy,
mean IoU, and frequency-weighted mean IoU over a per-point confusion matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator

from .errors import (
    DimMismatch,
    EmptyGT,
    EmptyInput,
    NoAssociations,
)
from .fusion import Object3D


@dataclass
class TextPromptSet:
    """Ordered class names with their prompt embeddings."""

    classes: tuple
    embeddings: np.ndarray  # (C, d), unit rows
    prompt_template: str = "a photo of {}."

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if len(self.classes) != len(self.embeddings):
            raise ValueError("one embedding per class required")
        if self.prompt_template.count("{}") != 1:
            raise ValueError("prompt template needs exactly one placeholder")

    @classmethod
    def from_gateway(cls, classes, gateway, prompt_template="a photo of {}."):
        vecs = np.stack(
            [gateway.embed_text(prompt_template.format(c)) for c in classes]
        )
        return cls(tuple(classes), vecs, prompt_template)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def restrict(self, keep_classes) -> "TextPromptSet":
        keep = [c for c in self.classes if c in set(keep_classes)]
        idx = [self.classes.index(c) for c in keep]
        return TextPromptSet(
            tuple(keep), self.embeddings[idx], self.prompt_template
        )


@dataclass
class LabeledObject:
    object: Object3D
    label_index: int
    score: float


def assign_labels(objects, prompts: TextPromptSet):
    """Argmax cosine similarity per object; ties go to the lowest index."""
    out = []
    for obj in objects:
        if obj.embedding.shape[0] != prompts.dim:
            raise DimMismatch(
                f"object dim {obj.embedding.shape[0]} vs prompts {prompts.dim}"
            )
        sims = prompts.embeddings @ obj.embedding
        idx = int(np.argmax(sims))  # first maximum wins
        out.append(LabeledObject(obj, idx, float(sims[idx])))
    return out


def transfer_labels(pred, gt_instances):
    """Match each prediction to the nearest ground-truth centroid.

    ``gt_instances`` is a list of (centroid, class); ties break toward the
    lower ground-truth index. Returns [(pred object id, gt class), ...].
    """
    if not gt_instances:
        raise EmptyGT("no ground-truth instances")
    if not pred:
        raise EmptyInput("no predictions")
    centroids = np.stack(
        [np.asarray(c, dtype=np.float64) for c, _ in gt_instances]
    )
    out = []
    for labeled in pred:
        d = np.linalg.norm(centroids - labeled.object.centroid, axis=1)
        j = int(np.argmin(d))  # first minimum = lowest gt index
        out.append((labeled.object.id, gt_instances[j][1]))
    return out


@dataclass
class SegMetrics:
    """Point-level segmentation scores over ground-truth-present classes."""

    mAcc: float
    mIoU: float
    fmIoU: float
    per_class_iou: dict
    class_counts: dict = field(default_factory=dict)


def compute_metrics(pred_point_labels, gt_point_labels, match_radius=0.05):
    """Confusion-matrix metrics via nearest-neighbor label transfer.

    Each ground-truth point takes the label of the nearest predicted point
    within ``match_radius``; uncovered ground-truth points count as false
    negatives of their class. Classes absent from the ground truth are
    excluded from the means.
    """
    pred_pts, pred_cls = _split_point_labels(pred_point_labels, "pred")
    gt_pts, gt_cls = _split_point_labels(gt_point_labels, "gt")

    tree = cKDTree(pred_pts)
    dist, nearest = tree.query(gt_pts, distance_upper_bound=match_radius)
    matched = np.isfinite(dist)
    if not matched.any():
        raise NoAssociations(
            f"no ground-truth point has a prediction within {match_radius} m"
        )

    present = sorted(set(gt_cls))
    counts = {c: 0 for c in present}
    tp = {c: 0 for c in present}
    fp = {c: 0 for c in present}
    fn = {c: 0 for c in present}
    for i, c in enumerate(gt_cls):
        counts[c] += 1
        if not matched[i]:
            fn[c] += 1
            continue
        p = pred_cls[nearest[i]]
        if p == c:
            tp[c] += 1
        else:
            fn[c] += 1
            if p in fp:
                fp[p] += 1

    total = sum(counts.values())
    per_iou = {}
    recalls = []
    for c in present:
        denom = tp[c] + fp[c] + fn[c]
        per_iou[c] = tp[c] / denom if denom else 0.0
        recalls.append(tp[c] / counts[c])
    miou = float(np.mean([per_iou[c] for c in present]))
    fmiou = float(sum(counts[c] / total * per_iou[c] for c in present))
    return SegMetrics(
        mAcc=float(np.mean(recalls)),
        mIoU=miou,
        fmIoU=fmiou,
        per_class_iou=per_iou,
        class_counts=counts,
    )


def _split_point_labels(pairs, name):
    pts = []
    cls = []
    for p, c in pairs:
        pts.append(np.asarray(p, dtype=np.float64).reshape(3))
        cls.append(c)
    if not pts:
        raise EmptyInput(f"{name} point labels are empty")
    return np.stack(pts), cls


def format_metrics_table(metrics: SegMetrics, class_names=None) -> str:
    """Plain-text report table."""
    lines = [
        f"{'metric':<12}{'value':>8}",
        f"{'mAcc':<12}{metrics.mAcc:>8.4f}",
        f"{'mIoU':<12}{metrics.mIoU:>8.4f}",
        f"{'fmIoU':<12}{metrics.fmIoU:>8.4f}",
        "",
        f"{'class':<20}{'IoU':>8}{'points':>10}",
    ]
    for c in sorted(metrics.per_class_iou):
        name = class_names[c] if class_names is not None else str(c)
        lines.append(
            f"{name:<20}{metrics.per_class_iou[c]:>8.4f}"
            f"{metrics.class_counts.get(c, 0):>10}"
        )
    return "\n".join(lines) + "\n"


def format_metrics_kv(metrics: SegMetrics, class_names=None) -> str:
    """Machine-readable key=value lines."""
    lines = [
        f"mAcc={metrics.mAcc:.6f}",
        f"mIoU={metrics.mIoU:.6f}",
        f"fmIoU={metrics.fmIoU:.6f}",
    ]
    for c in sorted(metrics.per_class_iou):
        name = class_names[c] if class_names is not None else str(c)
        lines.append(f"iou.{name}={metrics.per_class_iou[c]:.6f}")
    return "\n".join(lines) + "\n"


class OpenVocabLabeler(BaseEstimator):
    """Classifier-style wrapper: fit on class names, predict object labels."""

    def __init__(self, gateway=None, prompt_template="a photo of {}."):
        self.gateway = gateway
        self.prompt_template = prompt_template

    def fit(self, classes, y=None):
        if self.gateway is None:
            raise ValueError("a gateway is required to embed text prompts")
        self.prompts_ = TextPromptSet.from_gateway(
            classes, self.gateway, self.prompt_template
        )
        return self

    def predict(self, objects) -> np.ndarray:
        labeled = assign_labels(objects, self.prompts_)
        return np.array([lo.label_index for lo in labeled], dtype=np.int64)

    def label(self, objects):
        return assign_labels(objects, self.prompts_)
