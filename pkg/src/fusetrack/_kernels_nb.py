"""Numba loop kernels. Contracts mirror ``_kernels_np``.

3D IoU here clips one BEV rectangle against the other (Sutherland-Hodgman).
"""
import math

import numpy as np

from ._accel import njit
from .constants import CORNER_SIGNS, EPS_DEPTH

name = "numba"

_PI = math.pi
_TWO_PI = 2.0 * math.pi
_SIGNS = np.ascontiguousarray(CORNER_SIGNS)
_RHO = (0, 1, 2, 4, 5, 6)


@njit
def wrap_angle(a):
    if -_PI < a <= _PI:
        return a
    return _PI - ((_PI - a) % _TWO_PI)


@njit
def box_corners(boxes):
    n = boxes.shape[0]
    out = np.empty((n, 8, 3))
    for i in range(n):
        c = math.cos(boxes[i, 3])
        s = math.sin(boxes[i, 3])
        hl = 0.5 * boxes[i, 6]
        hh = 0.5 * boxes[i, 4]
        hw = 0.5 * boxes[i, 5]
        for k in range(8):
            lx = _SIGNS[k, 0] * hl
            ly = _SIGNS[k, 1] * hh
            lz = _SIGNS[k, 2] * hw
            out[i, k, 0] = boxes[i, 0] + c * lx + s * lz
            out[i, k, 1] = boxes[i, 1] + ly
            out[i, k, 2] = boxes[i, 2] - s * lx + c * lz
    return out


@njit
def project_corners(corners, rot, trans, K, width, height):
    n = corners.shape[0]
    out = np.empty((n, 4))
    valid = np.zeros(n, np.bool_)
    for i in range(n):
        umin = np.inf
        vmin = np.inf
        umax = -np.inf
        vmax = -np.inf
        nfront = 0
        for k in range(8):
            px = corners[i, k, 0]
            py = corners[i, k, 1]
            pz = corners[i, k, 2]
            cx = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
            cy = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
            cz = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
            if cz <= EPS_DEPTH:
                continue
            nfront += 1
            u = (K[0, 0] * cx + K[0, 1] * cy + K[0, 2] * cz) / cz
            v = (K[1, 1] * cy + K[1, 2] * cz) / cz
            umin = min(umin, u)
            umax = max(umax, u)
            vmin = min(vmin, v)
            vmax = max(vmax, v)
        left = max(umin, 0.0)
        top = max(vmin, 0.0)
        right = min(umax, width)
        bottom = min(vmax, height)
        out[i, 0] = left
        out[i, 1] = top
        out[i, 2] = right
        out[i, 3] = bottom
        valid[i] = nfront >= 2 and right > left and bottom > top
    return out, valid


@njit
def iou2d_matrix(a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(m):
            iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            out[i, j] = inter / (area_a + area_b - inter)
    return out


@njit
def scaled_distance_matrix(a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in _RHO:
                d = a[i, k] - b[j, k]
                acc += d * d
            c = math.cos(a[i, 3] - b[j, 3])
            c = min(max(c, 0.0), 1.0)
            out[i, j] = math.sqrt(acc) * (2.0 - c)
    return out


@njit
def planar_distance_matrix(a, b, ax0, ax1):
    n, m = a.shape[0], b.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            d0 = a[i, ax0] - b[j, ax0]
            d1 = a[i, ax1] - b[j, ax1]
            out[i, j] = math.sqrt(d0 * d0 + d1 * d1)
    return out


@njit
def _bev_rect(box, out):
    c = math.cos(box[3])
    s = math.sin(box[3])
    hl = 0.5 * box[6]
    hw = 0.5 * box[5]
    # CCW in (x, z).
    out[0, 0] = box[0] + c * hl - s * hw
    out[0, 1] = box[2] - s * hl - c * hw
    out[1, 0] = box[0] + c * hl + s * hw
    out[1, 1] = box[2] - s * hl + c * hw
    out[2, 0] = box[0] - c * hl + s * hw
    out[2, 1] = box[2] + s * hl + c * hw
    out[3, 0] = box[0] - c * hl - s * hw
    out[3, 1] = box[2] + s * hl - c * hw


@njit
def _clip_area(pa, pb, buf_in, buf_out):
    n = 4
    for k in range(4):
        buf_in[k, 0] = pa[k, 0]
        buf_in[k, 1] = pa[k, 1]
    for e in range(4):
        x1 = pb[e, 0]
        z1 = pb[e, 1]
        x2 = pb[(e + 1) % 4, 0]
        z2 = pb[(e + 1) % 4, 1]
        ex = x2 - x1
        ez = z2 - z1
        m = 0
        for k in range(n):
            px = buf_in[k, 0]
            pz = buf_in[k, 1]
            qx = buf_in[(k + 1) % n, 0]
            qz = buf_in[(k + 1) % n, 1]
            sp = ex * (pz - z1) - ez * (px - x1)
            sq = ex * (qz - z1) - ez * (qx - x1)
            if sq >= 0.0:
                if sp < 0.0:
                    t = sp / (sp - sq)
                    buf_out[m, 0] = px + t * (qx - px)
                    buf_out[m, 1] = pz + t * (qz - pz)
                    m += 1
                buf_out[m, 0] = qx
                buf_out[m, 1] = qz
                m += 1
            elif sp >= 0.0:
                t = sp / (sp - sq)
                buf_out[m, 0] = px + t * (qx - px)
                buf_out[m, 1] = pz + t * (qz - pz)
                m += 1
        n = m
        if n == 0:
            return 0.0
        for k in range(n):
            buf_in[k, 0] = buf_out[k, 0]
            buf_in[k, 1] = buf_out[k, 1]
    area = 0.0
    for k in range(n):
        k2 = (k + 1) % n
        area += buf_in[k, 0] * buf_in[k2, 1] - buf_in[k2, 0] * buf_in[k, 1]
    return 0.5 * abs(area)


@njit
def iou3d_matrix(a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.zeros((n, m))
    ra = np.empty((4, 2))
    rb = np.empty((4, 2))
    buf_in = np.empty((16, 2))
    buf_out = np.empty((16, 2))
    for i in range(n):
        _bev_rect(a[i], ra)
        reach_a = 0.5 * math.hypot(a[i, 5], a[i, 6])
        va = a[i, 4] * a[i, 5] * a[i, 6]
        for j in range(m):
            reach = reach_a + 0.5 * math.hypot(b[j, 5], b[j, 6])
            if math.hypot(a[i, 0] - b[j, 0], a[i, 2] - b[j, 2]) >= reach:
                continue
            lo = max(a[i, 1] - 0.5 * a[i, 4], b[j, 1] - 0.5 * b[j, 4])
            hi = min(a[i, 1] + 0.5 * a[i, 4], b[j, 1] + 0.5 * b[j, 4])
            if hi <= lo:
                continue
            _bev_rect(b[j], rb)
            inter = _clip_area(ra, rb, buf_in, buf_out) * (hi - lo)
            if inter <= 0.0:
                continue
            vb = b[j, 4] * b[j, 5] * b[j, 6]
            out[i, j] = min(max(inter / (va + vb - inter), 0.0), 1.0)
    return out


@njit
def greedy_scan(values, threshold, maximize):
    n, m = values.shape
    limit = min(n, m)
    rows = np.empty(limit, np.int64)
    cols = np.empty(limit, np.int64)
    if limit == 0:
        return rows, cols
    flat = values.ravel()
    if maximize:
        order = np.argsort(-flat, kind="mergesort")
    else:
        order = np.argsort(flat, kind="mergesort")
    row_used = np.zeros(n, np.bool_)
    col_used = np.zeros(m, np.bool_)
    k = 0
    for idx in order:
        v = flat[idx]
        if maximize:
            if not v > threshold:
                break
        elif not v < threshold:
            break
        i = idx // m
        j = idx % m
        if row_used[i] or col_used[j]:
            continue
        row_used[i] = True
        col_used[j] = True
        rows[k] = i
        cols[k] = j
        k += 1
        if k == limit:
            break
    return rows[:k], cols[:k]


@njit
def kf_predict(mean, cov, q_diag):
    m = mean.copy()
    for i in range(3):
        m[i] += m[i + 7]
    m[3] = wrap_angle(m[3])
    P = cov.copy()
    for i in range(3):
        for j in range(10):
            P[i, j] += P[i + 7, j]
    for j in range(3):
        for i in range(10):
            P[i, j] += P[i, j + 7]
    for i in range(10):
        P[i, i] += q_diag[i]
    return m, 0.5 * (P + P.T)


@njit
def kf_update(mean, cov, z, r_diag):
    y = np.empty(7)
    for k in range(7):
        y[k] = z[k] - mean[k]
    d = wrap_angle(z[3] - mean[3])
    if abs(d) > 0.5 * _PI:
        d = wrap_angle(d + _PI)
    y[3] = d
    S = cov[:7, :7].copy()
    for k in range(7):
        S[k, k] += r_diag[k]
    Kt = np.linalg.solve(S, np.ascontiguousarray(cov[:7, :]))
    K = Kt.T
    m = mean + K @ y
    m[3] = wrap_angle(m[3])
    IKH = np.eye(10)
    IKH[:, :7] -= K
    KR = K.copy()
    for k in range(7):
        KR[:, k] *= r_diag[k]
    P = IKH @ cov @ IKH.T + KR @ Kt
    return m, 0.5 * (P + P.T)
