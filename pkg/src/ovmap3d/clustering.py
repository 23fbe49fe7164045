"""Density clustering shared by 2D mask splitting and 3D point refinement.

Semantics (deterministic, matches the classic density-based definition):

* a point is *core* when at least ``min_pts`` points, counting itself, lie
  within ``eps`` (inclusive) of it;
* clusters are the eps-connectivity components of the core points, created
  in ascending order of their smallest core index;
* a non-core point within ``eps`` of some core point is a *border* point and
  joins the earliest-created adjacent cluster;
* everything else is noise and gets label -1.
"""

from __future__ import annotations

import numpy as np
from sklearn.cluster import DBSCAN


def dbscan_labels(points, eps: float, min_pts: int) -> np.ndarray:
    """Cluster labels per point (-1 = noise), -1-free labels start at 0."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be 2D, got shape {pts.shape}")
    if pts.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    model = DBSCAN(eps=eps, min_samples=min_pts)
    return model.fit(pts).labels_.astype(np.int64)
