"""Independent brute-force oracles used to freeze expected values in tests.

Nothing here may call into the package code paths it checks: rotations come
from scipy, intersection and distance tests are done the slow direct way.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation


def posed_vertices(mesh, pose) -> np.ndarray:
    """Transform mesh vertices with scipy (independent of package quaternion math)."""
    q = pose.rotation  # (w, x, y, z)
    rot = Rotation.from_quat([q[1], q[2], q[3], q[0]])
    return rot.apply(mesh.vertices) + pose.translation


def ray_cast_depth(mesh, pose, cam, near: float = 1e-3) -> np.ndarray:
    """Per-pixel nearest ray/triangle intersection depth (inf where no hit)."""
    verts = posed_vertices(mesh, pose)
    cols, rows = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    dirs = np.column_stack(
        [
            ((cols.ravel() - cam.cx) / cam.fx),
            ((rows.ravel() - cam.cy) / cam.fy),
            np.ones(cam.width * cam.height),
        ]
    )
    best = np.full(dirs.shape[0], np.inf)
    for i, j, k in mesh.triangles:
        v0, v1, v2 = verts[i], verts[j], verts[k]
        e1 = v1 - v0
        e2 = v2 - v0
        h = np.cross(dirs, e2)
        a = h @ e1
        ok = np.abs(a) > 1e-14
        f = np.where(ok, 1.0 / np.where(ok, a, 1.0), 0.0)
        s = -v0
        u = f * (h @ s)
        q = np.cross(s, e1)
        v = f * (dirs @ q)
        t = f * (e2 @ q)
        hit = ok & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1 + 1e-12) & (t > near)
        best = np.where(hit & (t < best), t, best)
    return best.reshape(cam.height, cam.width)


def _closest_on_triangle(p: np.ndarray, a, b, c) -> np.ndarray:
    """Closest points on triangle (a, b, c) for each row of p (Ericson)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ap @ ab
    d2 = ap @ ac
    bp = p - b
    d3 = bp @ ab
    d4 = bp @ ac
    cp = p - c
    d5 = cp @ ab
    d6 = cp @ ac
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    v = np.where(denom != 0, vb / np.where(denom == 0, 1, denom), 0.0)
    w = np.where(denom != 0, vc / np.where(denom == 0, 1, denom), 0.0)
    out = a + v[:, None] * ab + w[:, None] * ac  # interior case
    # vertex regions
    out = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, out)
    out = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, out)
    # edge AB
    vab = d1 / np.where(d1 - d3 == 0, 1, d1 - d3)
    on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0) & (d1 - d3 != 0)
    out = np.where(on_ab[:, None], a + np.clip(vab, 0, 1)[:, None] * ab, out)
    # edge AC
    wac = d2 / np.where(d2 - d6 == 0, 1, d2 - d6)
    on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0) & (d2 - d6 != 0)
    out = np.where(on_ac[:, None], a + np.clip(wac, 0, 1)[:, None] * ac, out)
    # edge BC
    wbc = (d4 - d3) / np.where((d4 - d3) + (d5 - d6) == 0, 1, (d4 - d3) + (d5 - d6))
    on_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0) & ((d4 - d3) + (d5 - d6) != 0)
    out = np.where(on_bc[:, None], b + np.clip(wbc, 0, 1)[:, None] * (c - b), out)
    return out


def point_mesh_distance(points: np.ndarray, mesh, pose) -> np.ndarray:
    """Distance from each point to the posed mesh surface."""
    verts = posed_vertices(mesh, pose)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    best = np.full(pts.shape[0], np.inf)
    for i, j, k in mesh.triangles:
        closest = _closest_on_triangle(pts, verts[i], verts[j], verts[k])
        d = np.linalg.norm(pts - closest, axis=1)
        best = np.minimum(best, d)
    return best


def brute_force_weight(rendered_depth, crop, cam, score, eps, alpha, beta, gamma):
    """Naive double-loop reimplementation of the three-term weight.

    Returns (weight, n_inliers, n_b, n_r) computed directly from the raw
    arrays without any shared helper.
    """
    h, w = rendered_depth.shape
    n_r = 0
    for r in range(h):
        for c in range(w):
            if np.isfinite(rendered_depth[r, c]):
                n_r += 1
    n_b = crop.points.shape[0]
    n = 0
    for k in range(n_b):
        r, c = int(crop.pixels[k, 0]), int(crop.pixels[k, 1])
        z = rendered_depth[r, c]
        if not np.isfinite(z):
            continue
        px = (c - cam.cx) / cam.fx * z
        py = (r - cam.cy) / cam.fy * z
        d = np.sqrt(
            (px - crop.points[k, 0]) ** 2
            + (py - crop.points[k, 1]) ** 2
            + (z - crop.points[k, 2]) ** 2
        )
        if d < eps:
            n += 1
    if n_r == 0:
        return 0.0, n, n_b, n_r
    weight = alpha * (n / n_b) + beta * (n / n_r) + gamma * score
    return weight, n, n_b, n_r
