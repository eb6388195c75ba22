"""Per-frame greedy fusion of 3D detections with per-camera 2D detections."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import kernels
from .constants import CLASSES
from .geometry import BoxImage, Box3D, CameraModel, boxes_to_array, project_boxes


class DetectionError(ValueError):
    pass


def _check_common(score, class_id):
    if not 0.0 <= score <= 1.0:
        raise DetectionError(f"score {score} outside [0, 1]")
    if class_id not in CLASSES:
        raise DetectionError(f"unknown class {class_id!r}; accepted: {', '.join(CLASSES)}")


@dataclass(frozen=True, slots=True)
class Detection3D:
    box: Box3D
    score: float
    class_id: str
    frame_index: int = 0

    def __post_init__(self):
        _check_common(self.score, self.class_id)


@dataclass(frozen=True, slots=True)
class Detection2D:
    box: BoxImage
    score: float
    class_id: str
    frame_index: int = 0
    mask_payload: Optional[str] = None

    def __post_init__(self):
        _check_common(self.score, self.class_id)

    @property
    def camera_id(self) -> str:
        return self.box.camera_id


@dataclass(frozen=True, slots=True)
class FusedInstance:
    det3d: Optional[Detection3D] = None
    det2d: Optional[Detection2D] = None

    def __post_init__(self):
        if self.det3d is None and self.det2d is None:
            raise DetectionError("fused instance needs at least one detection")
        if self.det3d is not None and self.det2d is not None and self.det3d.class_id != self.det2d.class_id:
            raise DetectionError("fused detections disagree on class")

    @property
    def class_id(self) -> str:
        return self.det3d.class_id if self.det3d is not None else self.det2d.class_id

    @property
    def has_3d(self) -> bool:
        return self.det3d is not None

    @property
    def has_2d(self) -> bool:
        return self.det2d is not None


Threshold = Union[float, Mapping[str, float]]


def _threshold_for(theta: Threshold, class_id: str) -> float:
    return theta[class_id] if isinstance(theta, Mapping) else float(theta)


def _fuse_camera(dets3d, proj, valid, dets2d, theta):
    """Greedy per-class matching for one camera.

    Returns a list of ``(i3, i2, overlap)`` in acceptance order.
    """
    if not dets3d or not dets2d:
        return []
    b2 = np.array([d.box.as_array() for d in dets2d])
    overlap = kernels.iou2d_matrix(proj, b2)
    overlap[~valid] = 0.0
    cls3 = [d.class_id for d in dets3d]
    cls2 = [d.class_id for d in dets2d]
    pairs = []
    for c in sorted(set(cls3) & set(cls2)):
        rows = np.array([i for i, k in enumerate(cls3) if k == c])
        cols = np.array([j for j, k in enumerate(cls2) if k == c])
        sub = np.ascontiguousarray(overlap[np.ix_(rows, cols)])
        r, q = kernels.greedy_scan(sub, _threshold_for(theta, c), True)
        pairs.extend((int(rows[a]), int(cols[b]), float(sub[a, b])) for a, b in zip(r, q))
    return pairs


def fuse_single_camera(
    dets3d: Sequence[Detection3D],
    dets2d: Sequence[Detection2D],
    cam: CameraModel,
    theta_fusion: Threshold,
):
    """Fuse detections seen by one camera.

    Returns ``(pairs, unmatched3d, unmatched2d)`` where pairs are
    ``(3d_index, 2d_index, overlap)`` sorted by 3D index.
    """
    proj, valid = project_boxes(boxes_to_array([d.box for d in dets3d]), cam)
    pairs = sorted(_fuse_camera(dets3d, proj, valid, dets2d, theta_fusion))
    used3 = {p[0] for p in pairs}
    used2 = {p[1] for p in pairs}
    return (
        pairs,
        [i for i in range(len(dets3d)) if i not in used3],
        [j for j in range(len(dets2d)) if j not in used2],
    )


def fuse_frame(
    dets3d: Sequence[Detection3D],
    dets2d_by_camera: Mapping[str, Sequence[Detection2D]],
    cams: Sequence[CameraModel],
    theta_fusion: Threshold,
    box_array: Optional[np.ndarray] = None,
) -> list[FusedInstance]:
    """Fuse across a camera rig.

    A 3D detection paired in several cameras keeps the pairing from the
    camera where its clipped projection is largest (ties go to the lower
    camera id); the other 2D detections are emitted as 2D-only instances.
    Instances come out as: one per 3D detection in input order, then
    2D-only instances by camera id and index.
    """
    arr = boxes_to_array([d.box for d in dets3d]) if box_array is None else box_array
    best: dict[int, tuple[float, str, int]] = {}
    for cam in sorted(cams, key=lambda c: c.camera_id):
        dets2d = dets2d_by_camera.get(cam.camera_id, ())
        if not dets2d or not dets3d:
            continue
        proj, valid = project_boxes(arr, cam)
        for i3, i2, _ in _fuse_camera(dets3d, proj, valid, dets2d, theta_fusion):
            area = (proj[i3, 2] - proj[i3, 0]) * (proj[i3, 3] - proj[i3, 1])
            if i3 not in best or area > best[i3][0]:
                best[i3] = (area, cam.camera_id, i2)
    consumed = {(cid, i2) for _, cid, i2 in best.values()}
    out = []
    for i, d in enumerate(dets3d):
        if i in best:
            _, cid, i2 = best[i]
            out.append(FusedInstance(d, dets2d_by_camera[cid][i2]))
        else:
            out.append(FusedInstance(d, None))
    for cid in sorted(dets2d_by_camera):
        for j, d in enumerate(dets2d_by_camera[cid]):
            if (cid, j) not in consumed:
                out.append(FusedInstance(None, d))
    return out
