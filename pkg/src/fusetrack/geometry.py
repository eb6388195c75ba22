"""Box types, pinhole projection and association metrics.

Scalar functions here are the reference surface; the tracker calls the
batched kernels in :mod:`fusetrack.kernels` with the same semantics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from ._kernels_np import wrap_angle
from .constants import BOX_DIM, GROUND_AXES

__all__ = [
    "Box3D",
    "BoxImage",
    "CameraModel",
    "wrap_angle",
    "alpha_orientation",
    "scaled_distance",
    "planar_distance",
    "iou_2d",
    "iou_3d",
    "box3d_corners",
    "project_box",
    "boxes_to_array",
    "project_boxes",
]


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Box3D:
    """Oriented box: center position, dimensions (h, w, l), yaw about the vertical."""

    position: tuple[float, float, float]
    dimensions: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        dims = tuple(float(v) for v in self.dimensions)
        if len(pos) != 3 or len(dims) != 3:
            raise GeometryError("position and dimensions must be 3-vectors")
        if not all(math.isfinite(v) for v in pos + dims) or not math.isfinite(self.yaw):
            raise GeometryError("box parameters must be finite")
        if min(dims) <= 0.0:
            raise GeometryError(f"box dimensions must be positive, got {dims}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @classmethod
    def _unchecked(cls, pos: tuple, dims: tuple, yaw: float) -> "Box3D":
        """Skip validation for values already known to be finite floats, positive dims and wrapped yaw."""
        b = object.__new__(cls)
        object.__setattr__(b, "position", pos)
        object.__setattr__(b, "dimensions", dims)
        object.__setattr__(b, "yaw", yaw)
        return b

    @classmethod
    def from_array(cls, v) -> "Box3D":
        """Build from a ``[x, y, z, yaw, h, w, l]`` vector."""
        return cls((v[0], v[1], v[2]), (v[4], v[5], v[6]), v[3])

    def as_array(self) -> np.ndarray:
        x, y, z = self.position
        h, w, l = self.dimensions
        return np.array([x, y, z, self.yaw, h, w, l])

    @property
    def volume(self) -> float:
        h, w, l = self.dimensions
        return h * w * l


@dataclass(frozen=True, slots=True)
class BoxImage:
    camera_id: str
    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        for name in ("left", "top", "right", "bottom"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise GeometryError(f"image box {name} must be finite")
            object.__setattr__(self, name, v)
        if not (self.left < self.right and self.top < self.bottom):
            raise GeometryError(
                f"degenerate image box ({self.left}, {self.top}, {self.right}, {self.bottom})"
            )

    @classmethod
    def _unchecked(cls, camera_id: str, left: float, top: float, right: float, bottom: float) -> "BoxImage":
        b = object.__new__(cls)
        for name, v in zip(("camera_id", "left", "top", "right", "bottom"), (camera_id, left, top, right, bottom)):
            object.__setattr__(b, name, v)
        return b

    @property
    def area(self) -> float:
        return (self.right - self.left) * (self.bottom - self.top)

    def as_array(self) -> np.ndarray:
        return np.array([self.left, self.top, self.right, self.bottom])


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera. ``extrinsics`` maps tracking-frame points into the camera frame."""

    camera_id: str
    intrinsics: np.ndarray
    extrinsics: np.ndarray
    image_size: tuple[float, float]

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=float)
        T = np.asarray(self.extrinsics, dtype=float)
        if K.shape != (3, 3):
            raise GeometryError("intrinsics must be 3x3")
        if T.shape == (3, 4):
            T = np.vstack([T, [0.0, 0.0, 0.0, 1.0]])
        if T.shape != (4, 4):
            raise GeometryError("extrinsics must be 3x4 or 4x4")
        if K[0, 0] <= 0 or K[1, 1] <= 0 or np.any(np.tril(K, -1) != 0):
            raise GeometryError("intrinsics must be upper-triangular with positive focal lengths")
        R = T[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() >= 1e-9:
            raise GeometryError("extrinsic rotation is not orthonormal")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise GeometryError("image size must be positive")
        K.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsics", T)
        object.__setattr__(self, "image_size", (float(w), float(h)))

    def moved(self, world_to_rig: np.ndarray) -> "CameraModel":
        """Camera whose extrinsics are composed after ``world_to_rig``."""
        return CameraModel(self.camera_id, self.intrinsics, self.extrinsics @ world_to_rig, self.image_size)


def alpha_orientation(yaw_i: float, yaw_j: float) -> float:
    """Orientation penalty in [1, 2]; opposing or perpendicular headings score 2."""
    return 2.0 - min(max(math.cos(yaw_i - yaw_j), 0.0), 1.0)


def scaled_distance(b_i: Box3D, b_j: Box3D) -> float:
    acc = 0.0
    for p, q in zip(b_i.position + b_i.dimensions, b_j.position + b_j.dimensions):
        acc += (p - q) * (p - q)
    return math.sqrt(acc) * alpha_orientation(b_i.yaw, b_j.yaw)


def planar_distance(b_i: Box3D, b_j: Box3D, ground_axes: Sequence[int] = GROUND_AXES) -> float:
    a0, a1 = ground_axes
    d0 = b_i.position[a0] - b_j.position[a0]
    d1 = b_i.position[a1] - b_j.position[a1]
    return math.sqrt(d0 * d0 + d1 * d1)


def iou_2d(a: BoxImage, b: BoxImage) -> float:
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_3d(a: Box3D, b: Box3D) -> float:
    return float(kernels.iou3d_matrix(a.as_array()[None], b.as_array()[None])[0, 0])


def box3d_corners(b: Box3D) -> np.ndarray:
    """The 8 corners, ordered as in ``constants.CORNER_SIGNS``."""
    return kernels.box_corners(b.as_array()[None])[0]


def boxes_to_array(boxes: Sequence[Box3D]) -> np.ndarray:
    if not boxes:
        return np.empty((0, BOX_DIM))
    return np.array([b.as_array() for b in boxes])


def project_boxes(arr: np.ndarray, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Project an ``(n, 7)`` box array; returns ``(n, 4)`` image boxes and a validity mask."""
    if arr.shape[0] == 0:
        return np.empty((0, 4)), np.zeros(0, bool)
    T = cam.extrinsics
    w, h = cam.image_size
    return kernels.project_corners(kernels.box_corners(arr), T[:3, :3], T[:3, 3], cam.intrinsics, w, h)


def project_box(b: Box3D, cam: CameraModel) -> Optional[BoxImage]:
    boxes, valid = project_boxes(b.as_array()[None], cam)
    if not valid[0]:
        return None
    return BoxImage(cam.camera_id, *boxes[0])
