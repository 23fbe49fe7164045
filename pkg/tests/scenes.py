"""Shared synthetic scene layouts for integration and acceptance tests.

Camera arcs are elevated (~40 deg) so no visible surface is seen at grazing
incidence (the renderer drops those returns like a real sensor), objects are
spread so nothing occludes the middle of anything else, and arcs are short
enough that consecutive views overlap heavily and merge cleanly.
"""

from __future__ import annotations

from ovmap3d.synth import (
    Primitive,
    SynthSceneSpec,
    arc_poses,
    intrinsics_from_fov,
)

TARGET = (0.0, 0.0, 0.35)


def camera_arc(count=6, radius=2.4, height=2.35, start_deg=33.0,
               span_deg=24.0):
    return arc_poses(TARGET, radius, height, count, start_deg, span_deg)


def frontal_arc(count=6, radius=2.4, height=2.35, span_deg=50.0):
    """Arc centered on the +x axis; every object sees views near yaw 0,
    which the orientation stages rely on."""
    return arc_poses(TARGET, radius, height, count, -span_deg / 2, span_deg)


_CATALOG = [
    Primitive("box", "couch", (0.0, 0.8, 0.25), size=(0.9, 0.4, 0.5)),
    Primitive("sphere", "vase", (0.1, -0.7, 0.35), radius=0.2),
    Primitive("box", "table", (-0.85, -0.1, 0.35), size=(0.45, 0.45, 0.25)),
    Primitive("sphere", "lamp", (0.9, -0.35, 0.5), radius=0.17),
    Primitive("box", "cabinet", (0.8, 0.6, 0.4), size=(0.35, 0.35, 0.6)),
    Primitive("box", "stool", (-0.6, 0.75, 0.2), size=(0.3, 0.3, 0.3)),
]


def simple_scene_spec(seed=3, n_objects=3, n_frames=5,
                      scene_id="simplescene") -> SynthSceneSpec:
    """3-6 well-separated primitives with distinct classes."""
    if not 3 <= n_objects <= len(_CATALOG):
        raise ValueError("n_objects must be 3..6")
    return SynthSceneSpec(
        seed=seed,
        room_extent=8.0,
        objects=_CATALOG[:n_objects],
        poses=camera_arc(count=n_frames),
        intrinsics=intrinsics_from_fov(160, 120, 60.0),
        scene_id=scene_id,
    )


def query_scene_spec(seed=7, scene_id="queryscene") -> SynthSceneSpec:
    """Unique anchors (cabinet, armchair) plus three duplicated target
    classes placed so every templated relation is unambiguous."""
    objects = [
        Primitive("box", "cabinet", (0.9, 0.0, 0.4), size=(0.45, 0.45, 0.6)),
        Primitive("box", "armchair", (-0.9, 0.1, 0.3), size=(0.5, 0.5, 0.5)),
        Primitive("sphere", "trashcan", (0.0, -0.75, 0.3), radius=0.18),
        Primitive("sphere", "trashcan", (0.2, 0.8, 0.3), radius=0.18),
        Primitive("box", "table", (-0.35, -0.25, 0.5), size=(0.4, 0.3, 0.2)),
        Primitive("box", "table", (0.35, 0.45, 0.55), size=(0.4, 0.3, 0.2)),
        Primitive("sphere", "vase", (-0.3, 0.85, 0.55), radius=0.15),
        Primitive("sphere", "vase", (0.75, -0.7, 0.45), radius=0.15),
    ]
    return SynthSceneSpec(
        seed=seed,
        room_extent=8.0,
        objects=objects,
        poses=frontal_arc(),
        intrinsics=intrinsics_from_fov(160, 120, 60.0),
        scene_id=scene_id,
    )
