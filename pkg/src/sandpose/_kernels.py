"""Numba kernels for z-buffer rasterization and particle scoring.

Internal module.  The rasterization contract (shared by the public renderer
and the batch scorer, which must agree bit-for-bit):
  - pixel centers at integer coordinates (u = col, v = row)
  - top-left fill rule for pixel centers exactly on a triangle edge
  - camera z interpolated perspective-correctly (1/z linear in screen space)
  - triangles clipped against the near plane, no back-face culling
"""

from __future__ import annotations

import math
import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np
from numba import njit, prange

NEAR_PLANE = 1e-3
INVALID_DEPTH = np.inf


@njit(cache=True, inline="always")
def _edge_admits(e, du, dv):
    # strict interior, or a tie on a top or left edge
    if e > 0.0:
        return True
    if e < 0.0:
        return False
    return dv < 0.0 or (dv == 0.0 and du > 0.0)


@njit(cache=True)
def _raster_tri(depth, u0, v0, w0, u1, v1, w1, u2, v2, w2):
    """Rasterize one screen-space triangle; w* are 1/z at the vertices."""
    h, w = depth.shape
    area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
    if area == 0.0:
        return
    if area < 0.0:
        u1, v1, w1, u2, v2, w2 = u2, v2, w2, u1, v1, w1
    umin = min(u0, min(u1, u2))
    umax = max(u0, max(u1, u2))
    vmin = min(v0, min(v1, v2))
    vmax = max(v0, max(v1, v2))
    c0 = max(0, int(math.ceil(umin)))
    c1 = min(w - 1, int(math.floor(umax)))
    r0 = max(0, int(math.ceil(vmin)))
    r1 = min(h - 1, int(math.floor(vmax)))
    if c0 > c1 or r0 > r1:
        return
    du0 = u1 - u0
    dv0 = v1 - v0
    du1 = u2 - u1
    dv1 = v2 - v1
    du2 = u0 - u2
    dv2 = v0 - v2
    for r in range(r0, r1 + 1):
        py = float(r)
        for c in range(c0, c1 + 1):
            px = float(c)
            e0 = du0 * (py - v0) - dv0 * (px - u0)
            if not _edge_admits(e0, du0, dv0):
                continue
            e1 = du1 * (py - v1) - dv1 * (px - u1)
            if not _edge_admits(e1, du1, dv1):
                continue
            e2 = du2 * (py - v2) - dv2 * (px - u2)
            if not _edge_admits(e2, du2, dv2):
                continue
            s = e0 + e1 + e2
            d = e1 * w0 + e2 * w1 + e0 * w2
            z = s / d
            if z < depth[r, c]:
                depth[r, c] = z
    return


@njit(cache=True)
def _render_into(depth, verts, tris, rot, trans, fx, fy, cx, cy, near):
    """Transform, near-clip, and rasterize a whole mesh into `depth`."""
    poly = np.empty((4, 3))
    proj = np.empty((4, 3))  # (u, v, 1/z) per clipped vertex
    cam = np.empty((3, 3))
    for k in range(tris.shape[0]):
        for m in range(3):
            vi = tris[k, m]
            x = verts[vi, 0]
            y = verts[vi, 1]
            z = verts[vi, 2]
            cam[m, 0] = rot[0, 0] * x + rot[0, 1] * y + rot[0, 2] * z + trans[0]
            cam[m, 1] = rot[1, 0] * x + rot[1, 1] * y + rot[1, 2] * z + trans[1]
            cam[m, 2] = rot[2, 0] * x + rot[2, 1] * y + rot[2, 2] * z + trans[2]
        nout = 0
        for i in range(3):
            j = (i + 1) % 3
            az = cam[i, 2]
            bz = cam[j, 2]
            a_in = az >= near
            b_in = bz >= near
            if a_in:
                poly[nout, 0] = cam[i, 0]
                poly[nout, 1] = cam[i, 1]
                poly[nout, 2] = az
                nout += 1
            if a_in != b_in:
                s = (near - az) / (bz - az)
                poly[nout, 0] = cam[i, 0] + s * (cam[j, 0] - cam[i, 0])
                poly[nout, 1] = cam[i, 1] + s * (cam[j, 1] - cam[i, 1])
                poly[nout, 2] = near
                nout += 1
        if nout < 3:
            continue
        for m in range(nout):
            z = poly[m, 2]
            proj[m, 0] = fx * poly[m, 0] / z + cx
            proj[m, 1] = fy * poly[m, 1] / z + cy
            proj[m, 2] = 1.0 / z
        for m in range(1, nout - 1):
            _raster_tri(
                depth,
                proj[0, 0], proj[0, 1], proj[0, 2],
                proj[m, 0], proj[m, 1], proj[m, 2],
                proj[m + 1, 0], proj[m + 1, 1], proj[m + 1, 2],
            )
    return


@njit(cache=True)
def _count_valid(depth):
    n = 0
    for r in range(depth.shape[0]):
        for c in range(depth.shape[1]):
            if depth[r, c] != INVALID_DEPTH:
                n += 1
    return n


@njit(cache=True)
def _count_inliers(depth, rows, cols, pts, fx, fy, cx, cy, eps):
    """Per-pixel inliers: observed crop point vs rendered depth at its pixel."""
    n = 0
    eps2 = eps * eps
    for k in range(rows.shape[0]):
        z = depth[rows[k], cols[k]]
        if z == INVALID_DEPTH:
            continue
        x = (cols[k] - cx) / fx * z
        y = (rows[k] - cy) / fy * z
        dx = x - pts[k, 0]
        dy = y - pts[k, 1]
        dz = z - pts[k, 2]
        if dx * dx + dy * dy + dz * dz < eps2:
            n += 1
    return n


@njit(cache=True, parallel=True)
def _score_batch(
    verts, tris, rots, trans,
    fx, fy, cx, cy, width, height, near,
    crop_rows, crop_cols, crop_pts, crop_start, crop_count,
    slot, det_score, eps, alpha, beta, gamma,
    out_w, out_n, out_nr,
):
    """Render-and-compare weights for a batch of pose hypotheses.

    Each particle renders into a private buffer, so iterations are
    independent and the result does not depend on scheduling.
    Crops are packed CSR-style: particle i reads slot[i]'s span.
    """
    m = rots.shape[0]
    for i in prange(m):
        depth = np.full((height, width), INVALID_DEPTH)
        _render_into(depth, verts, tris, rots[i], trans[i], fx, fy, cx, cy, near)
        nr = _count_valid(depth)
        s = slot[i]
        a = crop_start[s]
        nb = crop_count[s]
        n = _count_inliers(
            depth,
            crop_rows[a : a + nb],
            crop_cols[a : a + nb],
            crop_pts[a : a + nb],
            fx, fy, cx, cy, eps,
        )
        out_n[i] = n
        out_nr[i] = nr
        if nr == 0:
            out_w[i] = 0.0
        else:
            out_w[i] = alpha * (n / nb) + beta * (n / nr) + gamma * det_score[i]
    return
