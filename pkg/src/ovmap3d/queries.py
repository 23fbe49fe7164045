"""Templated retrieval queries with exact ground truth for synthetic scenes.

The generator instantiates the three templates the ground-truth-backed mock
gateway understands (nearest / far-from / facing-side) over a scene's
instances and keeps only combinations whose geometric answer is unambiguous
by a clear margin. The answer is computed here with inline geometry,
independent of the mock's resolver, so the two sides of the check stay
separate.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import FormatError

MARGIN = 0.05  # meters of separation required to call a query unambiguous


def _unambiguous_extreme(values, pick_max):
    order = np.argsort(values)
    if pick_max:
        order = order[::-1]
    if len(order) < 2:
        return int(order[0])
    if abs(values[order[0]] - values[order[1]]) < MARGIN:
        return None
    return int(order[0])


def generate_queries(gt, scene_id: str, max_queries: int = 20):
    """Query dicts: {"scene", "text", "gt_box", "tag"}.

    Anchors are instances of classes occurring exactly once; targets are
    classes with at least two instances so the relation does the work.
    """
    by_class = {}
    for idx, inst in enumerate(gt.instances):
        by_class.setdefault(gt.classes[inst.class_index], []).append(idx)
    anchors = {c: idxs[0] for c, idxs in by_class.items() if len(idxs) == 1}
    targets = {c: idxs for c, idxs in by_class.items() if len(idxs) >= 2}

    queries = []
    for target_class, members in sorted(targets.items()):
        centroids = np.stack([gt.instances[i].centroid for i in members])
        for anchor_class, anchor_idx in sorted(anchors.items()):
            a = gt.instances[anchor_idx].centroid
            dists = np.linalg.norm(centroids - a, axis=1)

            near = _unambiguous_extreme(dists, pick_max=False)
            if near is not None:
                queries.append(
                    _query(
                        scene_id,
                        f"the {target_class} that is nearest to the {anchor_class}",
                        gt.instances[members[near]].box,
                        "ViewIndep",
                    )
                )
            far = _unambiguous_extreme(dists, pick_max=True)
            if far is not None:
                queries.append(
                    _query(
                        scene_id,
                        f"the {target_class} that is far from the {anchor_class}",
                        gt.instances[members[far]].box,
                        "ViewIndep",
                    )
                )

            # side queries: the observer stands at yaw 0 (+x of the anchor)
            # facing it, so the facing direction is -x and "left" is -y;
            # signed side score is therefore -(candidate_y - anchor_y)
            side_scores = -(centroids[:, 1] - a[1])
            left = _unambiguous_extreme(side_scores, pick_max=True)
            if left is not None and side_scores[left] > MARGIN:
                queries.append(
                    _query(
                        scene_id,
                        f"Facing the {anchor_class}, pick the {target_class} "
                        "on your left.",
                        gt.instances[members[left]].box,
                        "ViewDep",
                    )
                )
            right = _unambiguous_extreme(side_scores, pick_max=False)
            if right is not None and side_scores[right] < -MARGIN:
                queries.append(
                    _query(
                        scene_id,
                        f"Facing the {anchor_class}, pick the {target_class} "
                        "on your right.",
                        gt.instances[members[right]].box,
                        "ViewDep",
                    )
                )
            if len(queries) >= max_queries:
                return queries[:max_queries]
    return queries


def _query(scene_id, text, box, tag):
    return {
        "scene": scene_id,
        "text": text,
        "gt_box": [*box.min_corner, *box.max_corner],
        "tag": tag,
    }


def write_queries(path, queries):
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps(q, sort_keys=True) + "\n")


def read_queries(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                q = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(path, lineno, f"bad query line: {exc.msg}")
            for key in ("scene", "text", "gt_box", "tag"):
                if key not in q:
                    raise FormatError(path, lineno, f"missing field {key!r}")
            out.append(q)
    return out
