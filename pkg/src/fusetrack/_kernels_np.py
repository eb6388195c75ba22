"""Pure-numpy kernels. Same contracts as the numba kernels in ``_kernels_nb``.

All box arrays use the ``[x, y, z, yaw, h, w, l]`` layout from ``constants``.
"""
import math

import numpy as np

from .constants import CORNER_SIGNS, EPS_DEPTH, RHO_INDEX

name = "numpy"

_TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Wrap a scalar angle into (-pi, pi]; values already inside are returned untouched."""
    if -math.pi < a <= math.pi:
        return a
    return math.pi - ((math.pi - a) % _TWO_PI)


def box_corners(boxes):
    c = np.cos(boxes[:, 3])[:, None]
    s = np.sin(boxes[:, 3])[:, None]
    lx = CORNER_SIGNS[None, :, 0] * (0.5 * boxes[:, 6])[:, None]
    ly = CORNER_SIGNS[None, :, 1] * (0.5 * boxes[:, 4])[:, None]
    lz = CORNER_SIGNS[None, :, 2] * (0.5 * boxes[:, 5])[:, None]
    out = np.empty((boxes.shape[0], 8, 3))
    out[:, :, 0] = boxes[:, 0:1] + c * lx + s * lz
    out[:, :, 1] = boxes[:, 1:2] + ly
    out[:, :, 2] = boxes[:, 2:3] - s * lx + c * lz
    return out


def project_corners(corners, rot, trans, K, width, height):
    """Axis-aligned image hull of each corner set, clipped to the image.

    Returns ``(boxes, valid)`` with boxes as ``(n, 4)`` left/top/right/bottom.
    """
    n = corners.shape[0]
    px, py, pz = corners[..., 0], corners[..., 1], corners[..., 2]
    cx = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
    cy = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
    cz = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
    front = cz > EPS_DEPTH
    safe = np.where(front, cz, 1.0)
    u = (K[0, 0] * cx + K[0, 1] * cy + K[0, 2] * cz) / safe
    v = (K[1, 1] * cy + K[1, 2] * cz) / safe
    out = np.empty((n, 4))
    out[:, 0] = np.maximum(np.where(front, u, np.inf).min(axis=1), 0.0)
    out[:, 1] = np.maximum(np.where(front, v, np.inf).min(axis=1), 0.0)
    out[:, 2] = np.minimum(np.where(front, u, -np.inf).max(axis=1), width)
    out[:, 3] = np.minimum(np.where(front, v, -np.inf).max(axis=1), height)
    valid = (front.sum(axis=1) >= 2) & (out[:, 2] > out[:, 0]) & (out[:, 3] > out[:, 1])
    return out, valid


def iou2d_matrix(a, b):
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def scaled_distance_matrix(a, b):
    diff = a[:, None, RHO_INDEX] - b[None, :, RHO_INDEX]
    norm = np.sqrt((diff * diff).sum(axis=2))
    cos = np.cos(a[:, None, 3] - b[None, :, 3])
    return norm * (2.0 - np.clip(cos, 0.0, 1.0))


def planar_distance_matrix(a, b, ax0, ax1):
    d0 = a[:, None, ax0] - b[None, :, ax0]
    d1 = a[:, None, ax1] - b[None, :, ax1]
    return np.sqrt(d0 * d0 + d1 * d1)


def _bev_rects(boxes):
    # CCW rectangles in the (x, z) plane, shape (n, 4, 2).
    c = np.cos(boxes[:, 3])[:, None]
    s = np.sin(boxes[:, 3])[:, None]
    lx = np.array([1.0, 1.0, -1.0, -1.0])[None, :] * (0.5 * boxes[:, 6])[:, None]
    lz = np.array([-1.0, 1.0, 1.0, -1.0])[None, :] * (0.5 * boxes[:, 5])[:, None]
    out = np.empty((boxes.shape[0], 4, 2))
    out[:, :, 0] = boxes[:, 0:1] + c * lx + s * lz
    out[:, :, 1] = boxes[:, 2:3] - s * lx + c * lz
    return out


def _inside(points, rects):
    # points (p, k, 2) against CCW rects (p, 4, 2): inside-or-on for all edges.
    e0 = rects
    e1 = np.roll(rects, -1, axis=1)
    ex = (e1[:, :, 0] - e0[:, :, 0])[:, None, :]
    ez = (e1[:, :, 1] - e0[:, :, 1])[:, None, :]
    rx = points[:, :, None, 0] - e0[:, None, :, 0]
    rz = points[:, :, None, 1] - e0[:, None, :, 1]
    tol = 1e-12 * (np.abs(ex) + np.abs(ez)) * (np.abs(rx) + np.abs(rz) + 1.0)
    return np.all(ex * rz - ez * rx >= -tol, axis=2)


def _bev_intersection_area(ra, rb):
    """Convex intersection area of paired rectangles, gathered from corner
    containment and edge crossings, ordered by angle about their centroid."""
    p = ra.shape[0]
    a0, a1 = ra, np.roll(ra, -1, axis=1)
    b0, b1 = rb, np.roll(rb, -1, axis=1)
    da = (a1 - a0)[:, :, None, :]
    db = (b1 - b0)[:, None, :, :]
    off = b0[:, None, :, :] - a0[:, :, None, :]
    den = da[..., 0] * db[..., 1] - da[..., 1] * db[..., 0]
    ok = np.abs(den) > 1e-15
    den_safe = np.where(ok, den, 1.0)
    t = (off[..., 0] * db[..., 1] - off[..., 1] * db[..., 0]) / den_safe
    u = (off[..., 0] * da[..., 1] - off[..., 1] * da[..., 0]) / den_safe
    hit = ok & (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)
    cross = (a0[:, :, None, :] + t[..., None] * da).reshape(p, 16, 2)
    pts = np.concatenate([ra, rb, cross], axis=1)
    mask = np.concatenate([_inside(ra, rb), _inside(rb, ra), hit.reshape(p, 16)], axis=1)
    cnt = mask.sum(axis=1)
    w = mask.astype(float)
    centroid = (pts * w[..., None]).sum(axis=1) / np.maximum(cnt, 1)[:, None]
    ang = np.arctan2(pts[..., 1] - centroid[:, None, 1], pts[..., 0] - centroid[:, None, 0])
    ang = np.where(mask, ang, np.inf)
    order = np.argsort(ang, axis=1)
    pts = np.take_along_axis(pts, order[..., None], axis=1)
    k = np.arange(pts.shape[1])[None, :]
    nxt = np.where(k + 1 < cnt[:, None], k + 1, 0)
    q = np.take_along_axis(pts, nxt[..., None], axis=1)
    term = pts[..., 0] * q[..., 1] - q[..., 0] * pts[..., 1]
    area = 0.5 * np.abs(np.where(k < cnt[:, None], term, 0.0).sum(axis=1))
    return np.where(cnt >= 3, area, 0.0)


def iou3d_matrix(a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.zeros((n, m))
    if n == 0 or m == 0:
        return out
    ia, ib = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    ia, ib = ia.ravel(), ib.ravel()
    A, B = a[ia], b[ib]
    # Cheap bounding-circle reject.
    reach = 0.5 * (np.hypot(A[:, 5], A[:, 6]) + np.hypot(B[:, 5], B[:, 6]))
    near = np.hypot(A[:, 0] - B[:, 0], A[:, 2] - B[:, 2]) < reach
    lo = np.maximum(A[:, 1] - 0.5 * A[:, 4], B[:, 1] - 0.5 * B[:, 4])
    hi = np.minimum(A[:, 1] + 0.5 * A[:, 4], B[:, 1] + 0.5 * B[:, 4])
    near &= hi > lo
    idx = np.flatnonzero(near)
    if idx.size == 0:
        return out
    area = _bev_intersection_area(_bev_rects(A[idx]), _bev_rects(B[idx]))
    inter = area * (hi[idx] - lo[idx])
    va = A[idx, 4] * A[idx, 5] * A[idx, 6]
    vb = B[idx, 4] * B[idx, 5] * B[idx, 6]
    vals = np.where(inter > 0, inter / (va + vb - inter), 0.0)
    out.reshape(-1)[idx] = np.clip(vals, 0.0, 1.0)
    return out


def greedy_scan(values, threshold, maximize):
    """Sort-and-scan greedy assignment; returns matched (rows, cols)."""
    n, m = values.shape
    if n == 0 or m == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    flat = np.ascontiguousarray(values).ravel()
    order = np.argsort(-flat if maximize else flat, kind="stable")
    vals = flat[order]
    passing = vals > threshold if maximize else vals < threshold
    stop = int(np.argmin(passing)) if not passing.all() else passing.size
    row_used = np.zeros(n, bool)
    col_used = np.zeros(m, bool)
    rows, cols = [], []
    limit = min(n, m)
    for idx in order[:stop].tolist():
        i, j = divmod(idx, m)
        if row_used[i] or col_used[j]:
            continue
        row_used[i] = True
        col_used[j] = True
        rows.append(i)
        cols.append(j)
        if len(rows) == limit:
            break
    return np.array(rows, np.int64), np.array(cols, np.int64)


def _transition(n=10):
    F = np.eye(n)
    F[0, 7] = F[1, 8] = F[2, 9] = 1.0
    return F


_F = _transition()


def kf_predict(mean, cov, q_diag):
    m = _F @ mean
    m[3] = wrap_angle(m[3])
    P = _F @ cov @ _F.T + np.diag(q_diag)
    return m, 0.5 * (P + P.T)


def kf_update(mean, cov, z, r_diag):
    y = z - mean[:7]
    d = wrap_angle(z[3] - mean[3])
    if abs(d) > 0.5 * math.pi:
        d = wrap_angle(d + math.pi)
    y[3] = d
    R = np.diag(r_diag)
    S = cov[:7, :7] + R
    K = np.linalg.solve(S, cov[:7, :]).T
    m = mean + K @ y
    m[3] = wrap_angle(m[3])
    IKH = np.eye(10)
    IKH[:, :7] -= K
    P = IKH @ cov @ IKH.T + K @ R @ K.T
    return m, 0.5 * (P + P.T)
