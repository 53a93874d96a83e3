"""Procedural primitive meshes at household-object scale.

All generators return meshes centered at their bounding-box center, units
meters.  `OBJECT_LIBRARY` is the 15-class fixture set used by the synthetic
scene harness; rotationally or flip-ambiguous solids carry symmetric=True so
evaluation scores them with the closest-point metric.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import TriangleMesh

__all__ = [
    "make_box",
    "make_wedge",
    "make_cylinder",
    "make_cone",
    "make_icosphere",
    "make_union",
    "OBJECT_LIBRARY",
]


def _centered(verts: np.ndarray, tris: np.ndarray, symmetric: bool) -> TriangleMesh:
    v = np.asarray(verts, dtype=np.float64)
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    return TriangleMesh(v - center, np.asarray(tris, dtype=np.int64), symmetric=symmetric)


_BOX_FACES = [
    (0, 1, 2), (0, 2, 3),  # bottom
    (4, 6, 5), (4, 7, 6),  # top
    (0, 5, 1), (0, 4, 5),
    (1, 6, 2), (1, 5, 6),
    (2, 7, 3), (2, 6, 7),
    (3, 4, 0), (3, 7, 4),
]


def _box_verts(sx: float, sy: float, sz: float, origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    ox, oy, oz = origin
    return np.array(
        [
            [ox, oy, oz],
            [ox + sx, oy, oz],
            [ox + sx, oy + sy, oz],
            [ox, oy + sy, oz],
            [ox, oy, oz + sz],
            [ox + sx, oy, oz + sz],
            [ox + sx, oy + sy, oz + sz],
            [ox, oy + sy, oz + sz],
        ]
    )


def make_box(sx: float, sy: float, sz: float, symmetric: bool = True) -> TriangleMesh:
    return _centered(_box_verts(sx, sy, sz), _BOX_FACES, symmetric)


def make_wedge(sx: float, sy: float, sz: float, symmetric: bool = False) -> TriangleMesh:
    """Right-triangular prism: triangle (x, z) cross-section extruded along y."""
    v = np.array(
        [
            [0, 0, 0], [sx, 0, 0], [0, 0, sz],
            [0, sy, 0], [sx, sy, 0], [0, sy, sz],
        ],
        dtype=np.float64,
    )
    f = [
        (0, 1, 2),  # near end
        (3, 5, 4),  # far end
        (0, 4, 1), (0, 3, 4),  # bottom
        (0, 2, 5), (0, 5, 3),  # upright side
        (1, 4, 5), (1, 5, 2),  # slope
    ]
    return _centered(v, f, symmetric)


def make_union(
    parts: list[TriangleMesh], symmetric: bool = False, recenter: bool = True
) -> TriangleMesh:
    """Concatenate part meshes (no boolean union; fine for z-buffer rendering)."""
    verts = []
    tris = []
    offset = 0
    for p in parts:
        verts.append(p.vertices)
        tris.append(p.triangles + offset)
        offset += p.vertices.shape[0]
    if recenter:
        return _centered(np.vstack(verts), np.vstack(tris), symmetric)
    return TriangleMesh(np.vstack(verts), np.vstack(tris), symmetric=symmetric)


def _shifted(mesh: TriangleMesh, d) -> TriangleMesh:
    return TriangleMesh(mesh.vertices + np.asarray(d, dtype=np.float64), mesh.triangles)


def make_cylinder(radius: float, height: float, segments: int = 20) -> TriangleMesh:
    ang = 2.0 * math.pi * np.arange(segments) / segments
    ring = np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])
    bottom = np.column_stack([ring, np.full(segments, -height / 2)])
    top = np.column_stack([ring, np.full(segments, height / 2)])
    verts = np.vstack([bottom, top, [[0, 0, -height / 2]], [[0, 0, height / 2]]])
    cb, ct = 2 * segments, 2 * segments + 1
    f = []
    for i in range(segments):
        j = (i + 1) % segments
        f.append((i, j, segments + i))
        f.append((j, segments + j, segments + i))
        f.append((cb, j, i))
        f.append((ct, segments + i, segments + j))
    return _centered(verts, f, symmetric=True)


def make_cone(radius: float, height: float, segments: int = 20) -> TriangleMesh:
    ang = 2.0 * math.pi * np.arange(segments) / segments
    ring = np.column_stack(
        [radius * np.cos(ang), radius * np.sin(ang), np.full(segments, -height / 2)]
    )
    verts = np.vstack([ring, [[0, 0, height / 2]], [[0, 0, -height / 2]]])
    apex, cb = segments, segments + 1
    f = []
    for i in range(segments):
        j = (i + 1) % segments
        f.append((i, j, apex))
        f.append((cb, j, i))
    return _centered(verts, f, symmetric=True)


def make_icosphere(radius: float, subdivisions: int = 1) -> TriangleMesh:
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [row / np.linalg.norm(row) for row in v]
    faces = list(f)
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}
        new_faces = []

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return _centered(np.array(verts) * radius, faces, symmetric=True)


def _make_stairs(sx, sy, h1, h2) -> TriangleMesh:
    low = TriangleMesh(_box_verts(sx, sy, h1), _BOX_FACES)
    high = TriangleMesh(_box_verts(sx / 2, sy, h2), _BOX_FACES)
    return make_union([low, high])


def _make_house(sx, sy, wall_z, ridge_z, ridge_x) -> TriangleMesh:
    body = TriangleMesh(_box_verts(sx, sy, wall_z), _BOX_FACES)
    roof_v = np.array(
        [
            [0, 0, wall_z], [sx, 0, wall_z], [ridge_x, 0, ridge_z],
            [0, sy, wall_z], [sx, sy, wall_z], [ridge_x, sy, ridge_z],
        ]
    )
    roof_f = [
        (0, 1, 2), (3, 5, 4),
        (0, 2, 5), (0, 5, 3),
        (1, 4, 5), (1, 5, 2),
    ]
    roof = TriangleMesh(roof_v, roof_f)
    return make_union([body, roof])


def _make_tetra() -> TriangleMesh:
    v = np.array(
        [
            [0.0, 0.0, 0.0],
            [0.095, 0.0, 0.0],
            [0.02, 0.07, 0.0],
            [0.035, 0.022, 0.08],
        ]
    )
    f = [(0, 2, 1), (0, 1, 3), (1, 2, 3), (0, 3, 2)]
    return _centered(v, f, symmetric=False)


def _build_library() -> dict[str, TriangleMesh]:
    """Fifteen desk-scale classes: 5 asymmetric, 10 revolute/flip-symmetric
    solids in two size bands (small cans vs. large boxes both happen on desks,
    and the two bands stress estimation differently)."""
    lib = {
        "wedge": make_wedge(0.11, 0.07, 0.06),
        "ramp": make_wedge(0.12, 0.04, 0.035),
        "stairs": _make_stairs(0.09, 0.06, 0.028, 0.058),
        "house": _make_house(0.08, 0.055, 0.04, 0.075, 0.022),
        "tetra": _make_tetra(),
        "can_small": make_cylinder(0.042, 0.09),
        "bottle": make_cylinder(0.033, 0.14),
        "cone_small": make_cone(0.048, 0.11),
        "hex_prism": make_cylinder(0.046, 0.10, segments=6),
        "ball_small": make_icosphere(0.045, subdivisions=1),
        "can_large": make_cylinder(0.055, 0.11),
        "cone_large": make_cone(0.06, 0.13),
        "pyramid": make_cone(0.07, 0.12, segments=4),
        "ball_large": make_icosphere(0.058, subdivisions=1),
        "cuboid": make_box(0.09, 0.11, 0.14, symmetric=True),
    }
    return lib


OBJECT_LIBRARY: dict[str, TriangleMesh] = _build_library()
