"""Rigid-body math: poses, camera intrinsics, triangle meshes, point clouds.

Conventions used throughout the package:
  - all lengths are meters, all poses are expressed in the camera frame
  - quaternions are unit-norm, stored (w, x, y, z)
  - pixel (row, col) centers sit at integer image coordinates, so the
    principal point (cx, cy) is given in the same integer-centered grid
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MeshFormatError",
    "Pose6D",
    "CameraIntrinsics",
    "TriangleMesh",
    "PointCloud",
    "quat_multiply",
    "quat_conjugate",
    "quat_normalize",
    "quat_to_matrix",
    "matrix_to_quat",
    "quat_from_rotvec",
    "random_quaternion",
    "compose",
    "inverse",
    "transform_points",
    "apply_pose",
    "load_mesh",
    "save_mesh",
    "sample_surface_points",
]


class MeshFormatError(ValueError):
    """Raised when a mesh file violates the ASCII v/f format."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# quaternion helpers, (w, x, y, z) order


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return a unit quaternion; keeps already-normalized input bit-stable."""
    q = np.asarray(q, dtype=np.float64)
    n2 = float(q @ q)
    if not math.isfinite(n2) or n2 < 1e-24:
        raise ValueError("degenerate quaternion (norm ~ 0)")
    if abs(n2 - 1.0) < 1e-13:
        return q
    return q / math.sqrt(n2)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Convert unit quaternion (w, x, y, z) to a 3x3 rotation matrix."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * x * z + 2 * w * y],
            [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
            [2 * x * z - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Convert a 3x3 rotation matrix to a unit quaternion (w, x, y, z)."""
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    if trace > 0:
        s = 0.5 / math.sqrt(trace + 1.0)
        w = 0.25 / s
        x = (R[2, 1] - R[1, 2]) * s
        y = (R[0, 2] - R[2, 0]) * s
        z = (R[1, 0] - R[0, 1]) * s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    return quat_normalize(np.array([w, x, y, z]))


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    """Quaternion for a rotation-vector (axis * angle, radians)."""
    v = np.asarray(v, dtype=np.float64)
    theta = float(np.linalg.norm(v))
    if theta < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * theta
    s = math.sin(half) / theta
    return np.array([math.cos(half), v[0] * s, v[1] * s, v[2] * s])


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Draw a rotation uniformly over SO(3) (normalized 4D Gaussian)."""
    while True:
        q = rng.standard_normal(4)
        n = float(np.linalg.norm(q))
        if n > 1e-6:
            return q / n


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Pose6D:
    """Rigid transform: rotation (unit quaternion, w-x-y-z) then translation."""

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        q = np.array(self.rotation, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite translation")
        q = quat_normalize(q)
        object.__setattr__(self, "translation", _readonly(t))
        object.__setattr__(self, "rotation", _readonly(np.array(q)))

    @classmethod
    def identity(cls) -> "Pose6D":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_rt(cls, R: np.ndarray, t: np.ndarray) -> "Pose6D":
        return cls(t, matrix_to_quat(R))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera model; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        keys = {"fx", "fy", "cx", "cy", "width", "height"}
        missing = keys - set(d)
        if missing:
            raise ValueError(f"intrinsics missing keys: {sorted(missing)}")
        unknown = set(d) - keys
        if unknown:
            raise ValueError(f"intrinsics has unknown keys: {sorted(unknown)}")
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle mesh in object frame, meters; `symmetric` drives evaluation."""

    vertices: np.ndarray
    triangles: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if v.shape[0] == 0:
            raise ValueError("mesh has no vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh has non-finite vertices")
        if f.shape[0] == 0:
            raise ValueError("mesh has no triangles")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "triangles", _readonly(f))


@dataclass(frozen=True)
class PointCloud:
    """Points in camera frame; `pixels` holds (row, col) source indices."""

    points: np.ndarray
    pixels: np.ndarray | None = None

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud has non-finite points")
        object.__setattr__(self, "points", _readonly(p))
        if self.pixels is not None:
            px = np.array(self.pixels, dtype=np.int64).reshape(-1, 2)
            if px.shape[0] != p.shape[0]:
                raise ValueError("pixel index count does not match point count")
            object.__setattr__(self, "pixels", _readonly(px))

    def __len__(self) -> int:
        return self.points.shape[0]


# ---------------------------------------------------------------------------
# operations


def compose(a: Pose6D, b: Pose6D) -> Pose6D:
    """Rigid transform equal to applying `b` first, then `a`."""
    q = quat_multiply(a.rotation, b.rotation)
    t = quat_to_matrix(a.rotation) @ b.translation + a.translation
    return Pose6D(t, q)


def inverse(p: Pose6D) -> Pose6D:
    q = quat_conjugate(p.rotation)
    t = -(quat_to_matrix(q) @ p.translation)
    return Pose6D(t, q)


def apply_pose(p: Pose6D, points: np.ndarray) -> np.ndarray:
    """Map an (N, 3) array through R x + t."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return pts @ quat_to_matrix(p.rotation).T + p.translation


def transform_points(p: Pose6D, cloud: PointCloud) -> PointCloud:
    """Map every point through R x + t; pixel indices are preserved."""
    return PointCloud(apply_pose(p, cloud.points), cloud.pixels)


def load_mesh(path, symmetric: bool = False) -> TriangleMesh:
    """Parse an ASCII mesh: `v x y z` and `f i j k` lines, 1-based indices.

    Lines starting with `#` and blank lines are ignored.  Anything else,
    including non-triangle faces, is rejected with the offending line number.
    """
    verts: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    face_lines: list[int] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) != 4:
                    raise MeshFormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(x) for x in parts[1:]])
                except ValueError:
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex coordinate") from None
                if not all(math.isfinite(c) for c in verts[-1]):
                    raise MeshFormatError(f"{path}:{lineno}: non-finite vertex")
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise MeshFormatError(f"{path}:{lineno}: only triangle faces are supported")
                try:
                    idx = tuple(int(x) for x in parts[1:])
                except ValueError:
                    raise MeshFormatError(f"{path}:{lineno}: bad face index") from None
                faces.append(idx)
                face_lines.append(lineno)
            else:
                raise MeshFormatError(f"{path}:{lineno}: unknown directive {parts[0]!r}")
    if not verts or not faces:
        raise MeshFormatError(f"{path}: empty mesh (needs at least one vertex and one face)")
    for (i, j, k), lineno in zip(faces, face_lines):
        for n in (i, j, k):
            if not (1 <= n <= len(verts)):
                raise MeshFormatError(
                    f"{path}:{lineno}: face index {n} out of range (1..{len(verts)})"
                )
    tri = np.array(faces, dtype=np.int64) - 1
    return TriangleMesh(np.array(verts), tri, symmetric=symmetric)


def save_mesh(mesh: TriangleMesh, path) -> None:
    """Write the ASCII v/f format read back by load_mesh."""
    with open(path, "w", encoding="ascii") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def sample_surface_points(mesh: TriangleMesh, count: int, seed=0) -> np.ndarray:
    """Sample `count` points on the mesh surface, area-weighted, deterministic."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tri = mesh.vertices[mesh.triangles]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    k = rng.choice(len(areas), size=count, p=areas / total)
    r1 = rng.random(count)
    r2 = rng.random(count)
    over = r1 + r2 > 1.0
    r1[over] = 1.0 - r1[over]
    r2[over] = 1.0 - r2[over]
    base = tri[k, 0]
    return base + r1[:, None] * (tri[k, 1] - base) + r2[:, None] * (tri[k, 2] - base)
