"""Greedy thresholded bipartite matching and the two association stages."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .constants import GROUND_AXES
from .fusion import FusedInstance
from .geometry import BoxImage, Box3D, CameraModel, boxes_to_array, project_boxes

METRICS = ("scaled_distance", "planar_distance", "iou_3d")
MINIMIZE, MAXIMIZE = "minimize", "maximize"


@dataclass
class MatchSet:
    matches: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_rows: list[int] = field(default_factory=list)
    unmatched_cols: list[int] = field(default_factory=list)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(r, c) for r, c, _ in self.matches]


def greedy_match(values, threshold: float, sense: str = MINIMIZE) -> MatchSet:
    """Accept pairs in sorted order while they beat ``threshold`` strictly.

    Ties resolve to the lower row, then the lower column. Use +inf (minimize)
    or -inf (maximize) to forbid a pair.
    """
    if sense not in (MINIMIZE, MAXIMIZE):
        raise ValueError(f"sense must be {MINIMIZE!r} or {MAXIMIZE!r}")
    values = np.ascontiguousarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError("values must be a 2D matrix")
    n, m = values.shape
    rows, cols = kernels.greedy_scan(values, float(threshold), sense == MAXIMIZE)
    rows, cols = rows.tolist(), cols.tolist()
    used_r, used_c = set(rows), set(cols)
    return MatchSet(
        [(r, c, float(values[r, c])) for r, c in zip(rows, cols)],
        [i for i in range(n) if i not in used_r],
        [j for j in range(m) if j not in used_c],
    )


def metric_sense(metric: str) -> str:
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return MAXIMIZE if metric == "iou_3d" else MINIMIZE


def metric_matrix(metric: str, a: np.ndarray, b: np.ndarray, ground_axes=GROUND_AXES) -> np.ndarray:
    """Pairwise metric between two ``(n, 7)`` box arrays."""
    if metric == "scaled_distance":
        return kernels.scaled_distance_matrix(a, b)
    if metric == "planar_distance":
        return kernels.planar_distance_matrix(a, b, ground_axes[0], ground_axes[1])
    if metric == "iou_3d":
        return kernels.iou3d_matrix(a, b)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def associate_stage1(
    instances: Sequence[FusedInstance],
    predicted: Sequence[tuple[int, Box3D]],
    theta_3d: float,
    metric: str = "scaled_distance",
    ground_axes=GROUND_AXES,
) -> MatchSet:
    """Match 3D-bearing instances (rows) to predicted track boxes (columns)."""
    a = boxes_to_array([inst.det3d.box for inst in instances])
    b = boxes_to_array([box for _, box in predicted])
    return associate_stage1_arrays(a, b, theta_3d, metric, ground_axes)


def associate_stage1_arrays(a, b, theta_3d, metric="scaled_distance", ground_axes=GROUND_AXES) -> MatchSet:
    if a.shape[0] == 0 or b.shape[0] == 0:
        return MatchSet([], list(range(a.shape[0])), list(range(b.shape[0])))
    return greedy_match(metric_matrix(metric, a, b, ground_axes), theta_3d, metric_sense(metric))


@dataclass(frozen=True, eq=False)
class Stage2Track:
    """Reference for one candidate track: its predicted box vector if it has
    a motion model, else its last observed image box."""

    predicted: Optional[np.ndarray] = None
    last_box2d: Optional[BoxImage] = None

    @property
    def has_filter(self) -> bool:
        return self.predicted is not None


def associate_stage2(
    instances: Sequence[FusedInstance],
    tracks: Sequence[Stage2Track],
    theta_2d: float,
    cams: Sequence[CameraModel],
) -> MatchSet:
    """Image-plane IoU matching of 2D-bearing instances (rows) to tracks (columns).

    Runs per camera. Instances that also carry a 3D detection may only pair
    with tracks that have no motion model. A track matched in several
    cameras keeps the camera where its reference box is largest.
    """
    n, m = len(instances), len(tracks)
    if n == 0 or m == 0:
        return MatchSet([], list(range(n)), list(range(m)))
    filtered = np.array([t.has_filter for t in tracks])
    pred_idx = np.flatnonzero(filtered)
    pred = np.array([tracks[k].predicted for k in pred_idx]) if pred_idx.size else np.empty((0, 7))
    best: dict[int, tuple[float, str, int, float]] = {}
    for cam in sorted(cams, key=lambda c: c.camera_id):
        cid = cam.camera_id
        rows = [i for i, inst in enumerate(instances) if inst.det2d is not None and inst.det2d.camera_id == cid]
        if not rows:
            continue
        ref = np.zeros((m, 4))
        ok = np.zeros(m, bool)
        if pred_idx.size:
            proj, valid = project_boxes(pred, cam)
            ref[pred_idx] = proj
            ok[pred_idx] = valid
        for k, t in enumerate(tracks):
            if t.predicted is None and t.last_box2d is not None and t.last_box2d.camera_id == cid:
                ref[k] = t.last_box2d.as_array()
                ok[k] = True
        if not ok.any():
            continue
        det = np.array([instances[i].det2d.box.as_array() for i in rows])
        iou = kernels.iou2d_matrix(det, ref)
        iou[:, ~ok] = -np.inf
        has3d = np.array([instances[i].det3d is not None for i in rows])
        if has3d.any():
            iou[np.ix_(has3d, filtered)] = -np.inf
        r, c = kernels.greedy_scan(iou, float(theta_2d), True)
        for a, k in zip(r.tolist(), c.tolist()):
            area = (ref[k, 2] - ref[k, 0]) * (ref[k, 3] - ref[k, 1])
            if k not in best or area > best[k][0]:
                best[k] = (area, cid, rows[a], float(iou[a, k]))
    matches = sorted(((i, k, v) for k, (_, _, i, v) in best.items()), key=lambda t: (-t[2], t[0], t[1]))
    used_r = {i for i, _, _ in matches}
    return MatchSet(
        matches,
        [i for i in range(n) if i not in used_r],
        [k for k in range(m) if k not in best],
    )
