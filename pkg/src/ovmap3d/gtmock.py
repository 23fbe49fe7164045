"""Ground-truth-backed mock gateway for deterministic retrieval runs.

Answers every LLM/VLM stage from the scene's ground truth instead of a
model: query structuring by template matching, verification by projecting
ground-truth centroids into the queried view, orientation by picking the
yaw-zero tile, and final decisions by geometric reasoning over the payload.

Templated queries understood by the structuring stage:

* "the <class> that is nearest to the <anchor>"
* "the <class> that is far from the <anchor>"
* "Facing the <anchor>, pick the <class> on your <left|right>."

The side convention: the observer stands at yaw 0 from the anchor (the +x
direction unless orientation grounding stored another yaw) facing it; "left"
is the counterclockwise perpendicular of the facing direction, which makes
the side score s = sin(yaw)*(dx) - cos(yaw)*(dy) with (dx, dy) the candidate
offset from the anchor; s > 0 means left.
"""

from __future__ import annotations

import json
import re

import numpy as np

from . import prompts
from .errors import BehindCamera, GatewayError
from .gateway import MockGateway

_NEAR = re.compile(r"^the (.+) that is nearest to the (.+)$")
_FAR = re.compile(r"^the (.+) that is far from the (.+)$")
_SIDE = re.compile(r"^[Ff]acing the (.+), pick the (.+) on your (left|right)\.$")


def parse_template_query(text: str):
    """(kind, main, anchor, side) for the supported templates, else None."""
    text = text.strip()
    m = _NEAR.match(text)
    if m:
        return ("nearest", m.group(1), m.group(2), None)
    m = _FAR.match(text)
    if m:
        return ("farthest", m.group(1), m.group(2), None)
    m = _SIDE.match(text)
    if m:
        return ("side", m.group(2), m.group(1), m.group(3))
    return None


def side_score(candidate_xy, anchor_xy, yaw: float) -> float:
    """Signed lateral offset of a candidate for an observer at ``yaw``
    from the anchor, facing it; positive = on the observer's left."""
    dx = candidate_xy[0] - anchor_xy[0]
    dy = candidate_xy[1] - anchor_xy[1]
    return float(np.sin(yaw) * dx - np.cos(yaw) * dy)


def resolve_spatial_query(raw: str, candidates, references) -> int:
    """Geometric answer over the decision payload; returns candidate index."""
    parsed = parse_template_query(raw)
    if parsed is None:
        raise GatewayError(f"query does not match a known template: {raw!r}")
    kind, _, anchor, side = parsed
    if anchor not in references:
        raise GatewayError(f"anchor {anchor!r} missing from references")
    anchor_c = np.asarray(references[anchor], dtype=np.float64)

    if kind in ("nearest", "farthest"):
        dists = [
            np.linalg.norm(np.asarray(c["centroid"]) - anchor_c)
            for c in candidates
        ]
        pick = np.argmin(dists) if kind == "nearest" else np.argmax(dists)
        return int(candidates[int(pick)]["index"])

    scores = []
    for c in candidates:
        yaw = c.get("yaw") or 0.0
        scores.append(side_score(c["centroid"], anchor_c, yaw))
    pick = np.argmax(scores) if side == "left" else np.argmin(scores)
    return int(candidates[int(pick)]["index"])


class GtSceneGateway(MockGateway):
    """Mock gateway that answers from a scene's ground truth.

    Embeddings are the same hash-seeded vectors as MockGateway, so objects
    synthesized with matching (seed, dim) line up exactly.
    """

    def __init__(self, gt, frames, dim=64, seed=0):
        super().__init__(dim=dim, seed=seed)
        self.gt = gt
        self.frames = {f.id: f for f in frames}

    def _chat(self, messages) -> str:
        text = messages[-1].text
        task = prompts.task_of(text)
        if task == "structure-query":
            return self._structure(text)
        if task == "verify-object":
            return self._verify(prompts.payload_of(text))
        if task == "orient-object":
            return self._orient(prompts.payload_of(text))
        if task == "final-decision":
            return self._decide(prompts.payload_of(text))
        raise GatewayError(f"unknown task marker in prompt: {task!r}")

    def _structure(self, text: str) -> str:
        m = re.search(r"^QUERY: (.*)$", text, re.MULTILINE)
        if m is None:
            raise GatewayError("no QUERY line in structuring prompt")
        parsed = parse_template_query(m.group(1))
        if parsed is None:
            raise GatewayError(f"unsupported query: {m.group(1)!r}")
        kind, main, anchor, side = parsed
        orientation = None
        if kind == "side":
            orientation = {"anchor": anchor, "token": f"facing+{side}"}
        return json.dumps(
            {
                "main": {"name": main, "attributes": []},
                "references": [anchor],
                "orientation": orientation,
            }
        )

    def _verify(self, payload) -> str:
        from .geometry import project

        frame = self.frames.get(payload["frame_id"])
        if frame is None:
            raise GatewayError(f"unknown frame {payload['frame_id']}")
        x0, y0, x1, y1 = payload["bbox"]
        center = np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])
        best = None
        for idx, inst in enumerate(self.gt.instances):
            try:
                (u, v), _ = project(inst.centroid, frame)
            except BehindCamera:
                continue
            if not (x0 <= u < x1 and y0 <= v < y1):
                continue
            d = float(np.hypot(u - center[0], v - center[1]))
            if best is None or d < best[0]:
                best = (d, idx)
        if best is None:
            return "no"
        name = self.gt.class_of_instance(best[1])
        return "yes" if name == payload["name"] else "no"

    def _orient(self, payload) -> str:
        # fixed-yaw contract for templated side queries: the observer stands
        # at yaw 0 from the anchor, so pick the tile nearest yaw 0
        tiles = payload["tiles"]
        errs = [
            abs((t["yaw"] + np.pi) % (2 * np.pi) - np.pi) for t in tiles
        ]
        return str(tiles[int(np.argmin(errs))]["index"])

    def _decide(self, payload) -> str:
        idx = resolve_spatial_query(
            payload["query"], payload["candidates"], payload["references"]
        )
        return str(idx)
