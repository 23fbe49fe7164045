"""Language-driven object retrieval over a fused 3D object map.

A free-form query is structured by an LLM into (main object, referenced
objects, orientation constraint). Candidates for the main object are mined by
embedding similarity with voxel-overlap deduplication, each candidate gets
its best camera view (visibility minus an occlusion penalty), a VLM verifies
the candidate in that view, optional orientation constraints are grounded
over discretized yaw bins, and a final LLM pass picks the answer from the
surviving candidates and the reference geometry.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from sklearn.base import BaseEstimator

from . import prompts
from .errors import (
    EmptyResults,
    GatewayError,
    InsufficientViews,
    NeverVisible,
    NoObjects,
    ParseFailure,
)
from .fusion import Object3D
from .gateway import LanguageGateway, Message
from .geometry import Box3, box_iou3d, project_points, voxel_iov
from .validation import check_probability

ORIENTATION_TOKENS = ("front", "back", "left", "right", "facing")


@dataclass(frozen=True)
class Orientation:
    """Anchor object plus an orientation token.

    Composite tokens join base tokens with "+", e.g. "facing+left" for
    view-dependent queries; every component must be from the closed set.
    """

    anchor: str
    token: str

    def __post_init__(self):
        for part in self.token.split("+"):
            if part not in ORIENTATION_TOKENS:
                raise ValueError(f"unknown orientation token {part!r}")

    @property
    def parts(self):
        return tuple(self.token.split("+"))


@dataclass(frozen=True)
class StructuredQuery:
    main: str
    attributes: tuple = ()
    references: tuple = ()
    orientation: Orientation | None = None
    raw: str = ""

    def __post_init__(self):
        if not self.main:
            raise ValueError("main object name must be non-empty")
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "references", tuple(self.references))

    def mining_text(self) -> str:
        return " ".join((*self.attributes, self.main))


@dataclass
class Candidate:
    object: Object3D
    similarity: float
    best_view: tuple | None = None  # (frame_id, bbox2d)
    verified: str = "unchecked"  # unchecked | pass | fail
    yaw: float | None = None

    def __post_init__(self):
        if not -1.0 - 1e-9 <= self.similarity <= 1.0 + 1e-9:
            raise ValueError("similarity must lie in [-1, 1]")
        if self.yaw is not None and not 0 <= self.yaw < 2 * np.pi:
            raise ValueError("yaw must lie in [0, 2*pi)")


@dataclass
class GroundingResult:
    predicted_box: Box3
    gt_box: Box3
    iou: float
    correct_at: dict = field(default_factory=dict)

    @classmethod
    def from_boxes(cls, predicted: Box3, gt: Box3, thresholds=(0.1, 0.25)):
        iou = box_iou3d(predicted, gt)
        return cls(
            predicted_box=predicted,
            gt_box=gt,
            iou=iou,
            correct_at={t: iou > t for t in thresholds},
        )


def _parse_structured_reply(reply: str, raw_query: str) -> StructuredQuery:
    text = reply.strip()
    fence = re.search(r"\{.*\}", text, re.DOTALL)
    if fence is None:
        raise ValueError("no JSON object in reply")
    data = json.loads(fence.group(0))
    main = data["main"]
    orientation = None
    if data.get("orientation"):
        orientation = Orientation(
            anchor=str(data["orientation"]["anchor"]),
            token=str(data["orientation"]["token"]),
        )
    return StructuredQuery(
        main=str(main["name"]),
        attributes=tuple(str(a) for a in main.get("attributes", ())),
        references=tuple(str(r) for r in data.get("references", ())),
        orientation=orientation,
        raw=raw_query,
    )


def structure_query(q: str, parser: LanguageGateway) -> StructuredQuery:
    """Ask the gateway for the structured query form; retry once."""
    if not q or not q.strip():
        raise ParseFailure("empty query")
    messages = [Message("user", prompts.build_structure_query(q))]
    last_err = None
    for attempt in range(2):
        try:
            reply = parser.chat(messages)
            return _parse_structured_reply(reply, q)
        except (GatewayError, ValueError, KeyError, TypeError) as exc:
            last_err = exc
            messages = [
                Message("user", prompts.build_structure_query(q)),
                Message(
                    "user",
                    "The previous reply was malformed. "
                    "Reply with the JSON object only.",
                ),
            ]
    raise ParseFailure(f"could not structure query {q!r}: {last_err}")


def mine_candidates(name, objects, text_embed, k=10, dedup_overlap=0.7):
    """Top-k objects by cosine similarity, deduplicated by voxel overlap.

    A candidate is dropped when its overlap ratio against a strictly larger
    (more voxels) kept candidate exceeds ``dedup_overlap``; the largest
    member of any overlapping group therefore always survives.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    check_probability(dedup_overlap, "dedup_overlap")
    objects = list(objects)
    if not objects:
        raise NoObjects(f"no objects to mine for {name!r}")
    text_embed = np.asarray(text_embed, dtype=np.float64)
    scored = sorted(
        (
            (float(obj.embedding @ text_embed), obj.id, obj)
            for obj in objects
        ),
        key=lambda t: (-t[0], t[1]),
    )[:k]

    by_size = sorted(scored, key=lambda t: (-len(t[2].voxels), t[1]))
    kept = []
    for sim, oid, obj in by_size:
        drop = False
        for _, _, larger in kept:
            if len(larger.voxels) <= len(obj.voxels):
                continue
            ratio, _ = voxel_iov(obj.voxels, larger.voxels)
            if ratio > dedup_overlap:
                drop = True
                break
        if not drop:
            kept.append((sim, oid, obj))

    kept.sort(key=lambda t: (-t[0], t[1]))
    return [Candidate(object=obj, similarity=sim) for sim, _, obj in kept]


def _visible_projection(points, frame, depth_tol):
    """uv coordinates and mask of points that project onto consistent depth."""
    uv, z = project_points(points, frame)
    h, w = frame.depth.shape
    u = np.floor(uv[:, 0]).astype(np.int64)
    v = np.floor(uv[:, 1]).astype(np.int64)
    ok = (z > 0) & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    if ok.any():
        du = frame.depth[v[ok], u[ok]]
        consistent = np.isfinite(du) & (du > 0) & (np.abs(du - z[ok]) <= depth_tol)
        vis = np.zeros(len(points), dtype=bool)
        vis[np.flatnonzero(ok)[consistent]] = True
    else:
        vis = np.zeros(len(points), dtype=bool)
    return uv, z, vis


def view_score(cand: Candidate, frame, others=(), lambda_occ=0.5,
               depth_tol=0.1):
    """(score, bbox2d) of one frame for a candidate, or None when invisible.

    score = visible_fraction - lambda_occ * occluder_fraction, where
    visible_fraction is the share of candidate points landing in-bounds with
    depth-map agreement within ``depth_tol``, and occluder_fraction counts
    other candidates' in-front points falling inside the candidate's visible
    bounding box, normalized by the candidate's visible point count. Adding
    an occluder can only lower the score.
    """
    pts = cand.object.points
    uv, _, vis = _visible_projection(pts, frame, depth_tol)
    n_vis = int(vis.sum())
    if n_vis == 0:
        return None
    visible_fraction = n_vis / len(pts)
    u, v = uv[vis, 0], uv[vis, 1]
    bbox = (
        int(np.floor(u.min())),
        int(np.floor(v.min())),
        int(np.floor(u.max())) + 1,
        int(np.floor(v.max())) + 1,
    )
    occluding = 0
    for other in others:
        if other is cand or other.object.id == cand.object.id:
            continue
        ouv, oz = project_points(other.object.points, frame)
        inside = (
            (oz > 0)
            & (ouv[:, 0] >= bbox[0])
            & (ouv[:, 0] < bbox[2])
            & (ouv[:, 1] >= bbox[1])
            & (ouv[:, 1] < bbox[3])
        )
        occluding += int(inside.sum())
    score = visible_fraction - lambda_occ * occluding / n_vis
    return score, bbox


def select_view(cand: Candidate, frames, others=(), lambda_occ=0.5,
                depth_tol=0.1):
    """Pick the frame maximizing :func:`view_score`; ties go to the lowest
    frame id. Returns (frame_id, bbox2d) of the winning view."""
    if not len(frames):
        raise ValueError("frames must be non-empty")
    best = None
    for frame in sorted(frames, key=lambda f: f.id):
        scored = view_score(cand, frame, others, lambda_occ, depth_tol)
        if scored is None:
            continue
        score, bbox = scored
        if best is None or score > best[0]:
            best = (score, frame.id, bbox)
    if best is None:
        raise NeverVisible(
            f"object {cand.object.id} projects into no frame consistently"
        )
    return best[1], best[2]


def verify_candidate(cand: Candidate, view, name: str,
                     vlm: LanguageGateway, image_ref=None) -> bool:
    """Binary VLM check on the candidate's view; updates cand.verified.

    A malformed or failed gateway reply raises GatewayError and leaves the
    candidate unchecked, so transport faults degrade fail-open.
    """
    frame_id, bbox = view
    text = prompts.build_verify_object(name, frame_id, bbox)
    images = (image_ref,) if image_ref else ()
    reply = vlm.chat([Message("user", text, images=images)])
    norm = reply.strip().lower()
    if norm.startswith("yes"):
        cand.verified = "pass"
        return True
    if norm.startswith("no"):
        cand.verified = "fail"
        return False
    raise GatewayError(f"verification reply not yes/no: {reply!r}")


def camera_yaw(frame, centroid) -> float:
    """Yaw of the camera position about the world up-axis, seen from the
    candidate centroid; in [0, 2*pi)."""
    d = frame.pose.translation - np.asarray(centroid, dtype=np.float64)
    return float(np.arctan2(d[1], d[0]) % (2 * np.pi))


def yaw_bins(frames, centroid, n_bins: int):
    """Assign frames to yaw bins; per bin keep the frame nearest the center.

    Returns an ascending list of (bin_index, frame) pairs for occupied bins.
    """
    width = 2 * np.pi / n_bins
    chosen = {}
    for frame in sorted(frames, key=lambda f: f.id):
        yaw = camera_yaw(frame, centroid)
        b = int(np.round(yaw / width)) % n_bins
        err = abs((yaw - b * width + np.pi) % (2 * np.pi) - np.pi)
        if b not in chosen or err < chosen[b][0]:
            chosen[b] = (err, frame)
    return [(b, chosen[b][1]) for b in sorted(chosen)]


def ground_orientation(cand: Candidate, frames, token: str,
                       vlm: LanguageGateway, n_bins: int = 8) -> float:
    """Resolve an orientation token to a yaw angle via tiled canonical views.

    Views are binned by camera yaw around the candidate centroid; the VLM
    picks a tile index, which maps back to that bin's center yaw. The tile
    index <-> bin mapping is a bijection over the occupied bins.
    """
    if n_bins < 4:
        raise ValueError("n_bins must be >= 4")
    bins = yaw_bins(frames, cand.object.centroid, n_bins)
    if len(bins) < 2:
        raise InsufficientViews(f"only {len(bins)} yaw bins have views")
    width = 2 * np.pi / n_bins
    tiles = [
        {
            "index": i,
            "bin": b,
            "frame_id": int(frame.id),
            "yaw": b * width,
        }
        for i, (b, frame) in enumerate(bins)
    ]
    text = prompts.build_orient_object(token, tiles)
    images = tuple(
        frame.rgb_path for _, frame in bins if frame.rgb_path is not None
    )
    reply = vlm.chat([Message("user", text, images=images)])
    try:
        idx = int(reply.strip())
    except ValueError as exc:
        raise GatewayError(f"orientation reply not an index: {reply!r}") from exc
    if not 0 <= idx < len(bins):
        raise GatewayError(f"orientation index {idx} out of range")
    return bins[idx][0] * width


def final_decision(query: StructuredQuery, candidates, ref_centroids,
                   llm: LanguageGateway) -> int:
    """LLM pass over the surviving candidates; falls back to similarity.

    A single candidate is returned immediately without a gateway call. An
    out-of-range or non-integer reply is retried once; after that the
    highest-similarity candidate wins.
    """
    if not candidates:
        raise ValueError("at least one candidate required")
    if len(candidates) == 1:
        return 0
    payload_cands = [
        {
            "index": i,
            "centroid": [round(x, 6) for x in c.object.centroid],
            "extent": [round(x, 6) for x in c.object.box.extent],
            "yaw": None if c.yaw is None else round(c.yaw, 6),
        }
        for i, c in enumerate(candidates)
    ]
    refs = {
        name: [round(x, 6) for x in np.asarray(ctr, dtype=np.float64)]
        for name, ctr in ref_centroids.items()
    }
    text = prompts.build_final_decision(query.raw, payload_cands, refs)
    messages = [Message("user", text)]
    for attempt in range(2):
        try:
            reply = llm.chat(messages)
            idx = int(reply.strip())
            if 0 <= idx < len(candidates):
                return idx
        except (GatewayError, ValueError):
            pass
        messages = [
            Message("user", text),
            Message(
                "user",
                f"Reply with one integer between 0 and {len(candidates) - 1}.",
            ),
        ]
    sims = [c.similarity for c in candidates]
    return int(np.argmax(sims))


def grounding_accuracy(results, thresholds=(0.1, 0.25)):
    """Fraction of results whose IoU strictly exceeds each threshold."""
    results = list(results)
    if not results:
        raise EmptyResults("no grounding results")
    return {
        t: sum(1 for r in results if r.iou > t) / len(results)
        for t in thresholds
    }


def grounding_report(results, tags=None, thresholds=(0.1, 0.25)):
    """Overall accuracy plus one row per subset tag."""
    report = {"overall": grounding_accuracy(results, thresholds)}
    if tags is not None:
        tags = list(tags)
        if len(tags) != len(results):
            raise ValueError("one tag per result required")
        for tag in sorted(set(tags)):
            subset = [r for r, t in zip(results, tags) if t == tag]
            report[tag] = grounding_accuracy(subset, thresholds)
    return report


@dataclass
class RetrievalOutcome:
    query: StructuredQuery
    candidates: list
    chosen_index: int
    predicted_box: Box3

    @property
    def chosen(self) -> Candidate:
        return self.candidates[self.chosen_index]


def run_query(query_text, objects, frames, gateway, *, topk=10,
              dedup_overlap=0.7, lambda_occ=0.5, depth_tol=0.1, n_bins=8,
              prompt_template="a photo of {}.") -> RetrievalOutcome:
    """Execute the full retrieval pipeline for one query.

    Gateway faults in verification and orientation are absorbed fail-open:
    the affected candidate stays in the pool unchecked. If verification
    rejects every candidate, the best-similarity one is restored so the
    pipeline always produces an answer.
    """
    query = structure_query(query_text, gateway)

    text_embed = gateway.embed_text(prompt_template.format(query.mining_text()))
    candidates = mine_candidates(
        query.main, objects, text_embed, k=topk, dedup_overlap=dedup_overlap
    )

    ref_centroids = {}
    for ref in query.references:
        ref_embed = gateway.embed_text(prompt_template.format(ref))
        top = mine_candidates(ref, objects, ref_embed, k=1)
        ref_centroids[ref] = top[0].object.centroid

    frames = sorted(frames, key=lambda f: f.id)
    frame_by_id = {f.id: f for f in frames}
    for cand in candidates:
        try:
            cand.best_view = select_view(
                cand, frames, candidates, lambda_occ=lambda_occ,
                depth_tol=depth_tol,
            )
        except NeverVisible:
            cand.best_view = None

    for cand in candidates:
        if cand.best_view is None:
            continue
        frame = frame_by_id[cand.best_view[0]]
        try:
            verify_candidate(
                cand, cand.best_view, query.main, gateway,
                image_ref=frame.rgb_path,
            )
        except GatewayError:
            pass  # fail-open: candidate stays unchecked

    surviving = [c for c in candidates if c.verified != "fail"]
    if not surviving:
        surviving = [max(candidates, key=lambda c: c.similarity)]

    if query.orientation is not None:
        for cand in surviving:
            try:
                cand.yaw = ground_orientation(
                    cand, frames, query.orientation.token, gateway,
                    n_bins=n_bins,
                )
            except (InsufficientViews, GatewayError):
                cand.yaw = None

    idx = final_decision(query, surviving, ref_centroids, gateway)
    chosen = surviving[idx]
    return RetrievalOutcome(
        query=query,
        candidates=surviving,
        chosen_index=idx,
        predicted_box=chosen.object.box,
    )


class ObjectRetriever(BaseEstimator):
    """Scene-bound retrieval front end (fit once, query many times)."""

    def __init__(self, topk=10, dedup_overlap=0.7, lambda_occ=0.5,
                 depth_tol=0.1, n_bins=8, prompt_template="a photo of {}."):
        self.topk = topk
        self.dedup_overlap = dedup_overlap
        self.lambda_occ = lambda_occ
        self.depth_tol = depth_tol
        self.n_bins = n_bins
        self.prompt_template = prompt_template

    def fit(self, objects, frames):
        self.objects_ = list(objects)
        self.frames_ = sorted(frames, key=lambda f: f.id)
        return self

    def retrieve(self, query_text, gateway) -> RetrievalOutcome:
        return run_query(
            query_text,
            self.objects_,
            self.frames_,
            gateway,
            topk=self.topk,
            dedup_overlap=self.dedup_overlap,
            lambda_occ=self.lambda_occ,
            depth_tol=self.depth_tol,
            n_bins=self.n_bins,
            prompt_template=self.prompt_template,
        )

    def ground(self, query_text, gateway, gt_box: Box3,
               thresholds=(0.1, 0.25)) -> GroundingResult:
        outcome = self.retrieve(query_text, gateway)
        return GroundingResult.from_boxes(
            outcome.predicted_box, gt_box, thresholds
        )
