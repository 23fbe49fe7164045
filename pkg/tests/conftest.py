from __future__ import annotations

import numpy as np
import pytest

from ovmap3d.geometry import Frame, Intrinsics, Pose


def random_rotation(rng) -> np.ndarray:
    """Uniform-ish random rotation via QR with sign fixing."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def random_pose(rng, translation_scale=2.0) -> Pose:
    return Pose(
        random_rotation(rng), rng.uniform(-1, 1, 3) * translation_scale
    )


def make_frame(frame_id=0, width=64, height=48, depth_value=2.0, pose=None,
               fx=60.0, fy=60.0):
    intr = Intrinsics(
        fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height,
    )
    depth = np.full((height, width), float(depth_value))
    return Frame(
        id=frame_id,
        depth=depth,
        intrinsics=intr,
        pose=pose or Pose.identity(),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
