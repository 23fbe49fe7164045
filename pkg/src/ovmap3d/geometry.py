"""Camera model, back-projection, voxel occupancy, and box overlap.

Conventions used everywhere downstream:

* poses are camera-to-world; ``x_world = R @ x_cam + t``
* depth maps store z-depth in meters (not ray length); 0 or NaN = invalid
* a pixel ``(u, v)`` back-projects to ``depth * [ (u-cx)/fx, (v-cy)/fy, 1 ]``
  in the camera frame
* voxel indices are ``floor(coord / voxel_size)`` per axis
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCamera,
    EmptyInput,
    InvalidDepth,
    OutOfBounds,
    SizeMismatch,
)
from .validation import as_points, check_positive


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation must have determinant +1")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose at ``eye`` looking toward ``target``.

    Camera axes follow the usual vision convention: x right, y down,
    z forward; ``up`` is the world up direction.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:  # looking straight along up
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    return Pose(rot, eye)


@dataclass
class Frame:
    """One RGB-D observation: depth map, intrinsics, camera-to-world pose."""

    id: int
    depth: np.ndarray
    intrinsics: Intrinsics
    pose: Pose
    rgb_path: str | None = None

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("frame id must be non-negative")
        self.depth = np.asarray(self.depth, dtype=np.float64)
        h, w = self.depth.shape
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise ValueError(
                f"depth is {w}x{h} but intrinsics say "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )
        if np.any(self.depth[~np.isnan(self.depth)] < 0):
            raise ValueError("depth values must be >= 0 (0 meaning invalid)")

    def valid_depth_mask(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)


@dataclass(frozen=True)
class VoxelSet:
    """Occupied cells of an axis-aligned voxel grid anchored at the origin."""

    voxel_size: float
    occupied: frozenset

    def __post_init__(self):
        check_positive(self.voxel_size, "voxel_size")
        object.__setattr__(self, "occupied", frozenset(self.occupied))

    def __len__(self) -> int:
        return len(self.occupied)


@dataclass(frozen=True)
class Box3:
    """Axis-aligned 3D box in meters."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)
        if np.any(lo > hi):
            raise ValueError("min_corner must be <= max_corner componentwise")

    @classmethod
    def of_points(cls, points) -> "Box3":
        pts = as_points(points)
        return cls(pts.min(axis=0), pts.max(axis=0))

    @property
    def volume(self) -> float:
        return float(np.prod(self.max_corner - self.min_corner))

    @property
    def center(self) -> np.ndarray:
        return (self.min_corner + self.max_corner) / 2.0

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner


def back_project(pixel, frame: Frame) -> np.ndarray:
    """Lift one integer pixel to a world-frame 3D point using its depth."""
    u, v = int(pixel[0]), int(pixel[1])
    h, w = frame.depth.shape
    if not (0 <= u < w and 0 <= v < h):
        raise OutOfBounds(f"pixel ({u}, {v}) outside {w}x{h} image")
    d = frame.depth[v, u]
    if not np.isfinite(d) or d <= 0:
        raise InvalidDepth(f"pixel ({u}, {v}) has invalid depth {d}")
    k = frame.intrinsics
    cam = d * np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
    return frame.pose.rotation @ cam + frame.pose.translation


def back_project_pixels(us, vs, depths, frame: Frame) -> np.ndarray:
    """Vectorized back-projection; caller guarantees depths are valid."""
    k = frame.intrinsics
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    cam = np.stack(
        [depths * (us - k.cx) / k.fx, depths * (vs - k.cy) / k.fy, depths],
        axis=1,
    )
    return cam @ frame.pose.rotation.T + frame.pose.translation


def project(point, frame: Frame):
    """Project a world point; returns ((u, v) as floats, z-depth in meters).

    Inverse of :func:`back_project` for points in front of the camera.
    """
    p = np.asarray(point, dtype=np.float64).reshape(3)
    if not np.isfinite(p).all():
        raise ValueError("point must be finite")
    cam = frame.pose.rotation.T @ (p - frame.pose.translation)
    if cam[2] <= 0:
        raise BehindCamera(f"camera-frame z = {cam[2]:.6f}")
    k = frame.intrinsics
    u = k.fx * cam[0] / cam[2] + k.cx
    v = k.fy * cam[1] / cam[2] + k.cy
    return (u, v), float(cam[2])


def project_points(points, frame: Frame):
    """Vectorized projection: returns (uv (n,2), z (n,)); no bounds check."""
    pts = as_points(points)
    cam = (pts - frame.pose.translation) @ frame.pose.rotation
    k = frame.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * cam[:, 0] / cam[:, 2] + k.cx
        v = k.fy * cam[:, 1] / cam[:, 2] + k.cy
    return np.stack([u, v], axis=1), cam[:, 2]


def voxelize(points, voxel_size: float) -> VoxelSet:
    """Map points to occupied integer grid cells; duplicates collapse."""
    check_positive(voxel_size, "voxel_size")
    pts = as_points(points)
    idx = np.floor(pts / voxel_size).astype(np.int64)
    cells = frozenset(map(tuple, idx.tolist()))
    return VoxelSet(voxel_size=voxel_size, occupied=cells)


def voxel_iov(a: VoxelSet, b: VoxelSet):
    """Directed intersection-over-volume in both directions.

    Returns ``(|a ∩ b| / |a|, |a ∩ b| / |b|)``. Volume of a voxel set is its
    occupied-cell count.
    """
    if a.voxel_size != b.voxel_size:
        raise SizeMismatch(
            f"voxel sizes differ: {a.voxel_size} vs {b.voxel_size}"
        )
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("voxel sets must be non-empty")
    inter = len(a.occupied & b.occupied)
    return inter / len(a), inter / len(b)


def box_iou3d(a: Box3, b: Box3) -> float:
    """Intersection-over-union of two axis-aligned boxes; 0 when disjoint."""
    lo = np.maximum(a.min_corner, b.min_corner)
    hi = np.minimum(a.max_corner, b.max_corner)
    if np.any(hi <= lo):
        return 0.0
    inter = float(np.prod(hi - lo))
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return inter / union
