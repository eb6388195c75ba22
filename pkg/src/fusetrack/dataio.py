"""Detection, calibration and pose ingestion; tracking-frame transform; writers.

Native detection input is JSON lines, one detection per line::

    {"seq": "0000", "frame": 0, "type": "3d", "class": "car",
     "xyz": [1, 2, 3], "hwl": [1.5, 1.6, 3.9], "yaw": 0.1, "score": 0.95}
    {"seq": "0000", "frame": 0, "type": "2d", "class": "car", "camera": "cam2",
     "box": [left, top, right, bottom], "score": 0.9, "mask": "<rle>"}

``seq`` defaults to ``"0000"``; ``mask`` is optional and passed through
untouched. Poses are JSON lines ``{"seq", "frame", "pose": 4x4}`` giving the
rig-to-world transform.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from ._kernels_np import wrap_angle
from .constants import CLASSES, GROUND_AXES, KITTI_TYPE_NAMES, VERTICAL_AXIS
from .fusion import Detection2D, Detection3D
from .geometry import BoxImage, Box3D, CameraModel

DEFAULT_SEQUENCE = "0000"
# Everything a malformed document can raise while being validated.
_PARSE_ERRORS = (ValueError, TypeError, KeyError, AttributeError, IndexError, OverflowError, RecursionError)
# Sequences are densified to frames 0..last, so bound the index.
MAX_FRAME = 10**7


class DataError(ValueError):
    """Malformed input; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: Optional[int] = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(eq=False)
class FrameInput:
    frame_index: int
    dets3d: list[Detection3D] = field(default_factory=list)
    dets2d_by_camera: dict[str, list[Detection2D]] = field(default_factory=dict)
    ego_pose: Optional[np.ndarray] = None
    timestamp: Optional[float] = None


@dataclass(frozen=True)
class TrackRecord:
    track_id: int
    class_id: str
    box3d: Optional[Box3D]
    score: float
    confirmed: bool
    box2d: Optional[BoxImage] = None
    mask_payload: Optional[str] = None


@dataclass(frozen=True)
class FrameOutput:
    frame_index: int
    records: list[TrackRecord] = field(default_factory=list)


@dataclass
class FrameDetections:
    dets3d: list[Detection3D] = field(default_factory=list)
    dets2d_by_camera: dict[str, list[Detection2D]] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Rig:
    cameras: list[CameraModel]
    ground_axes: tuple[int, int] = GROUND_AXES


# -- parsing helpers ---------------------------------------------------------

def _num(v, what) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{what} must be a number")
    return float(v)


def _int(v, what) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"{what} must be an integer")
    return v


def _frame(v) -> int:
    f = _int(v, "frame")
    if not 0 <= f < MAX_FRAME:
        raise ValueError(f"frame must lie in [0, {MAX_FRAME})")
    return f


def _vec(v, n, what) -> list[float]:
    if not isinstance(v, list) or len(v) != n:
        raise ValueError(f"{what} must be a list of {n} numbers")
    return [_num(x, what) for x in v]


def _matrix(v, rows, cols, what) -> np.ndarray:
    if not isinstance(v, list) or len(v) != rows:
        raise ValueError(f"{what} must be a {rows}x{cols} nested list")
    return np.array([_vec(r, cols, what) for r in v])


def _read_lines(path) -> list[str]:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataError(f"cannot read ({e.strerror})", path) from None
    try:
        return raw.decode("utf-8").splitlines()
    except UnicodeDecodeError:
        raise DataError("file is not valid UTF-8", path) from None


def _class(v) -> str:
    if v not in CLASSES:
        raise ValueError(f"unknown class {v!r}; accepted classes: {', '.join(CLASSES)}")
    return v


def _detection_from_doc(doc: Mapping[str, Any]):
    if not isinstance(doc, dict):
        raise ValueError("each line must be a JSON object")
    kind = doc.get("type")
    frame = _frame(doc.get("frame"))
    seq = doc.get("seq", DEFAULT_SEQUENCE)
    if not isinstance(seq, str) or not seq:
        raise ValueError("seq must be a non-empty string")
    cls = _class(doc.get("class"))
    score = _num(doc.get("score"), "score")
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score {score} outside [0, 1]")
    if kind == "3d":
        box = Box3D(_vec(doc.get("xyz"), 3, "xyz"), _vec(doc.get("hwl"), 3, "hwl"), _num(doc.get("yaw"), "yaw"))
        return seq, Detection3D(box, score, cls, frame)
    if kind == "2d":
        cam = doc.get("camera")
        if not isinstance(cam, str) or not cam:
            raise ValueError("camera must be a non-empty string")
        box = BoxImage(cam, *_vec(doc.get("box"), 4, "box"))
        mask = doc.get("mask")
        if mask is not None and not isinstance(mask, str):
            raise ValueError("mask must be a string when present")
        return seq, Detection2D(box, score, cls, frame, mask)
    raise ValueError(f"type must be '3d' or '2d', got {kind!r}")


def parse_detections(path) -> dict[str, dict[int, FrameDetections]]:
    """Detections grouped by sequence, then by frame (frames sorted)."""
    out: dict[str, dict[int, FrameDetections]] = {}
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        try:
            seq, det = _detection_from_doc(json.loads(line))
        except _PARSE_ERRORS as e:
            raise DataError(str(e), path, lineno) from None
        fd = out.setdefault(seq, {}).setdefault(det.frame_index, FrameDetections())
        if isinstance(det, Detection3D):
            fd.dets3d.append(det)
        else:
            fd.dets2d_by_camera.setdefault(det.camera_id, []).append(det)
    return {s: dict(sorted(frames.items())) for s, frames in sorted(out.items())}


def merge_detections(*sources: Mapping[str, Mapping[int, FrameDetections]]) -> dict[str, dict[int, FrameDetections]]:
    out: dict[str, dict[int, FrameDetections]] = {}
    for src in sources:
        for seq, frames in src.items():
            for f, fd in frames.items():
                tgt = out.setdefault(seq, {}).setdefault(f, FrameDetections())
                tgt.dets3d.extend(fd.dets3d)
                for cam, dets in fd.dets2d_by_camera.items():
                    tgt.dets2d_by_camera.setdefault(cam, []).extend(dets)
    return {s: dict(sorted(frames.items())) for s, frames in sorted(out.items())}


def fit_to_rig(dets: Mapping[str, Mapping[int, FrameDetections]], rig: Rig) -> int:
    """Clip every 2D box to its camera's image, in place.

    Raises DataError for a camera id the rig does not have. Boxes lying
    entirely outside the image are dropped. Returns how many boxes changed.
    """
    sizes = {c.camera_id: c.image_size for c in rig.cameras}
    changed = 0
    for seq, frames in dets.items():
        for f, fd in frames.items():
            for cam, d2 in fd.dets2d_by_camera.items():
                if cam not in sizes:
                    raise DataError(f"seq {seq} frame {f}: 2D detection for unknown camera {cam!r}")
                w, h = sizes[cam]
                kept = []
                for d in d2:
                    b = d.box
                    l, t, r, btm = max(b.left, 0.0), max(b.top, 0.0), min(b.right, w), min(b.bottom, h)
                    if (l, t, r, btm) == (b.left, b.top, b.right, b.bottom):
                        kept.append(d)
                        continue
                    changed += 1
                    if l < r and t < btm:
                        kept.append(replace(d, box=BoxImage(cam, l, t, r, btm)))
                d2[:] = kept
    return changed


def parse_poses(path) -> dict[str, dict[int, np.ndarray]]:
    out: dict[str, dict[int, np.ndarray]] = {}
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            if not isinstance(doc, dict):
                raise ValueError("each line must be a JSON object")
            seq = doc.get("seq", DEFAULT_SEQUENCE)
            if not isinstance(seq, str) or not seq:
                raise ValueError("seq must be a non-empty string")
            frame = _frame(doc.get("frame"))
            pose = _matrix(doc.get("pose"), 4, 4, "pose")
            _check_rotation(pose[:3, :3], 1e-6)
        except _PARSE_ERRORS as e:
            raise DataError(str(e), path, lineno) from None
        out.setdefault(seq, {})[frame] = pose
    return {s: dict(sorted(p.items())) for s, p in sorted(out.items())}


# -- calibration ---------------------------------------------------------------

def _check_rotation(R: np.ndarray, tol: float):
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation has non-finite entries")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g} > {tol:g})")


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U[:, -1] *= -1
        out = U @ Vt
    return out


def _rigid(R, t) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = _orthonormalize(R)
    T[:3, 3] = t
    return T


KITTI_IMAGE_SIZE = (1242.0, 375.0)
_KITTI_ALIASES = {
    "P2": ("P2",),
    "R0_rect": ("R0_rect", "R_rect"),
    "Tr_velo_to_cam": ("Tr_velo_to_cam", "Tr_velo_cam"),
}


def _parse_kitti_calib(path, lines, frame, image_size, camera_id) -> list[CameraModel]:
    raw: dict[str, list[float]] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        key = key.rstrip(":")
        try:
            raw[key] = [float(v) for v in rest.split()]
        except ValueError:
            raise DataError(f"non-numeric values for key {key!r}", path, lineno) from None

    def get(name, n):
        for alias in _KITTI_ALIASES[name]:
            if alias in raw:
                vals = raw[alias]
                if len(vals) != n:
                    raise DataError(f"key {alias!r} needs {n} values, got {len(vals)}", path)
                return np.array(vals)
        raise DataError(f"missing calibration key {name!r}", path)

    P2 = get("P2", 12).reshape(3, 4)
    K = P2[:, :3].copy()
    if not np.all(np.isfinite(P2)) or K[0, 0] <= 0 or K[1, 1] <= 0 or abs(K[2, 2]) < 1e-12:
        raise DataError("P2 is not a valid pinhole projection", path)
    K[np.tril_indices(3, -1)] = 0.0
    # P2 = K [I | t] for the rectified reference frame.
    t2 = np.linalg.solve(K, P2[:, 3])
    rect_to_cam = _rigid(np.eye(3), t2)
    if frame == "rect":
        T = rect_to_cam
    elif frame == "velo":
        R0 = get("R0_rect", 9).reshape(3, 3)
        Tr = get("Tr_velo_to_cam", 12).reshape(3, 4)
        try:
            _check_rotation(R0, 1e-6)
            _check_rotation(Tr[:, :3], 1e-6)
        except ValueError as e:
            raise DataError(str(e), path) from None
        T = rect_to_cam @ _rigid(R0, np.zeros(3)) @ _rigid(Tr[:, :3], Tr[:, 3])
    else:
        raise ValueError(f"frame must be 'rect' or 'velo', got {frame!r}")
    try:
        return [CameraModel(camera_id, K, T, image_size)]
    except ValueError as e:
        raise DataError(str(e), path) from None


def _camera_from_doc(doc, k) -> CameraModel:
    if not isinstance(doc, dict):
        raise ValueError(f"camera {k} must be an object")
    cid = doc.get("id")
    if not isinstance(cid, str) or not cid:
        raise ValueError(f"camera {k} needs a string 'id'")
    K = _matrix(doc.get("K"), 3, 3, "K")
    ext = doc.get("extrinsics")
    if ext is None:
        T = np.eye(4)
    else:
        T = _matrix(ext, 4, 4, "extrinsics")
        _check_rotation(T[:3, :3], 1e-6)
        T = _rigid(T[:3, :3], T[:3, 3])
    size = _vec(doc.get("image_size"), 2, "image_size")
    return CameraModel(cid, K, T, tuple(size))


def load_rig(path, frame: str = "rect", image_size=KITTI_IMAGE_SIZE, camera_id: str = "cam2") -> Rig:
    """Rig from a native JSON description or a KITTI calib text file.

    JSON form::

        {"cameras": [{"id": "cam2", "K": [[...]], "extrinsics": [[...]],
                      "image_size": [w, h]}],
         "ground_axes": [0, 2]}
    """
    lines = _read_lines(path)
    text = "\n".join(lines).lstrip()
    if not text.startswith("{"):
        return Rig(_parse_kitti_calib(path, lines, frame, image_size, camera_id))
    try:
        doc = json.loads(text)
        cams_doc = doc.get("cameras") if isinstance(doc, dict) else None
        if not isinstance(cams_doc, list):
            raise ValueError("rig needs a 'cameras' list")
        cams = [_camera_from_doc(c, k) for k, c in enumerate(cams_doc)]
        ids = [c.camera_id for c in cams]
        if len(set(ids)) != len(ids):
            raise ValueError("camera ids must be unique")
        axes = tuple(_int(a, "ground_axes") for a in doc.get("ground_axes", list(GROUND_AXES)))
        if len(axes) != 2 or sorted(axes) != sorted(a for a in range(3) if a != VERTICAL_AXIS):
            raise ValueError(f"ground_axes must be the two non-vertical axes {list(GROUND_AXES)}")
    except _PARSE_ERRORS as e:
        raise DataError(str(e), path) from None
    return Rig(cams, axes)


def parse_calibration(path, frame: str = "rect", image_size=KITTI_IMAGE_SIZE) -> list[CameraModel]:
    return load_rig(path, frame, image_size).cameras


def rig_to_dict(rig: Rig) -> dict:
    return {
        "cameras": [
            {
                "id": c.camera_id,
                "K": c.intrinsics.tolist(),
                "extrinsics": c.extrinsics.tolist(),
                "image_size": list(c.image_size),
            }
            for c in rig.cameras
        ],
        "ground_axes": list(rig.ground_axes),
    }


# -- frame transform -------------------------------------------------------------

def transform_box(box: Box3D, pose: np.ndarray) -> Box3D:
    R = pose[:3, :3]
    pos = R @ np.asarray(box.position) + pose[:3, 3]
    heading = R @ np.array([math.cos(box.yaw), 0.0, -math.sin(box.yaw)])
    yaw = math.atan2(-heading[2], heading[0])
    return Box3D(tuple(pos), box.dimensions, yaw)


def to_tracking_frame(dets3d: Sequence[Detection3D], ego_pose: Optional[np.ndarray]) -> list[Detection3D]:
    """Move sensor-frame detections into the world frame with a rig-to-world pose."""
    if ego_pose is None:
        return list(dets3d)
    pose = np.asarray(ego_pose, dtype=float)
    return [Detection3D(transform_box(d.box, pose), d.score, d.class_id, d.frame_index) for d in dets3d]


def invert_pose(pose: np.ndarray) -> np.ndarray:
    R = pose[:3, :3]
    inv = np.eye(4)
    inv[:3, :3] = R.T
    inv[:3, 3] = -R.T @ pose[:3, 3]
    return inv


def build_frames(
    dets: Mapping[int, FrameDetections],
    poses: Optional[Mapping[int, np.ndarray]] = None,
) -> list[FrameInput]:
    """Contiguous frames 0..last covering every detection and pose frame.

    3D detections are assumed to be in the rig frame and are moved into the
    world frame with the frame's pose.
    """
    poses = poses or {}
    last = max(list(dets) + list(poses), default=-1)
    frames = []
    for f in range(last + 1):
        fd = dets.get(f, FrameDetections())
        pose = poses.get(f)
        frames.append(FrameInput(f, to_tracking_frame(fd.dets3d, pose), fd.dets2d_by_camera, pose))
    return frames


# -- writers ---------------------------------------------------------------------

def _box3d_to_dict(b: Optional[Box3D]):
    if b is None:
        return None
    return {"xyz": list(b.position), "hwl": list(b.dimensions), "yaw": b.yaw}


def _box2d_to_dict(b: Optional[BoxImage]):
    if b is None:
        return None
    return {"camera": b.camera_id, "box": [b.left, b.top, b.right, b.bottom]}


def output_to_dict(out: FrameOutput) -> dict:
    return {
        "frame": out.frame_index,
        "records": [
            {
                "track_id": r.track_id,
                "class": r.class_id,
                "box3d": _box3d_to_dict(r.box3d),
                "score": r.score,
                "confirmed": r.confirmed,
                "box2d": _box2d_to_dict(r.box2d),
                "mask": r.mask_payload,
            }
            for r in out.records
        ],
    }


def write_json(outputs: Iterable[FrameOutput], path, sequence: str = DEFAULT_SEQUENCE) -> None:
    doc = {"sequence": sequence, "frames": [output_to_dict(o) for o in outputs]}
    try:
        with open(path, "w") as f:
            json.dump(doc, f)
            f.write("\n")
    except OSError as e:
        raise DataError(f"cannot write ({e.strerror})", path) from None


def _record_from_doc(doc) -> TrackRecord:
    b3 = doc["box3d"]
    b2 = doc["box2d"]
    return TrackRecord(
        track_id=_int(doc["track_id"], "track_id"),
        class_id=_class(doc["class"]),
        box3d=None if b3 is None else Box3D(_vec(b3["xyz"], 3, "xyz"), _vec(b3["hwl"], 3, "hwl"), _num(b3["yaw"], "yaw")),
        score=_num(doc["score"], "score"),
        confirmed=bool(doc["confirmed"]),
        box2d=None if b2 is None else BoxImage(b2["camera"], *_vec(b2["box"], 4, "box")),
        mask_payload=doc.get("mask"),
    )


def read_json(path) -> tuple[str, list[FrameOutput]]:
    """Inverse of :func:`write_json`; returns ``(sequence, outputs)``."""
    text = "\n".join(_read_lines(path))
    try:
        doc = json.loads(text)
        frames = [
            FrameOutput(_int(fr["frame"], "frame"), [_record_from_doc(r) for r in fr["records"]])
            for fr in doc["frames"]
        ]
        seq = doc.get("sequence", DEFAULT_SEQUENCE)
    except _PARSE_ERRORS as e:
        raise DataError(f"bad track file ({e!r})", path) from None
    return seq, frames


def kitti_alpha(box: Box3D) -> float:
    x, _, z = box.position
    return wrap_angle(box.yaw - math.atan2(x, z))


def kitti_row(frame: int, r: TrackRecord, with_score: bool = False) -> str:
    """One KITTI tracking row: the 17 label fields, plus the score when asked.

    Location is the bottom-face center. Missing boxes use the KITTI
    don't-care sentinels.
    """
    kind = KITTI_TYPE_NAMES[r.class_id]
    if r.box2d is not None:
        bb = (r.box2d.left, r.box2d.top, r.box2d.right, r.box2d.bottom)
    else:
        bb = (-1.0, -1.0, -1.0, -1.0)
    if r.box3d is not None:
        h, w, l = r.box3d.dimensions
        x, y, z = r.box3d.position
        loc = (x, y + 0.5 * h, z)
        alpha, ry = kitti_alpha(r.box3d), r.box3d.yaw
    else:
        h = w = l = -1.0
        loc = (-1000.0, -1000.0, -1000.0)
        alpha = ry = -10.0
    fields = [str(frame), str(r.track_id), kind, "0", "0", f"{alpha:.6f}"]
    fields += [f"{v:.4f}" for v in bb]
    fields += [f"{v:.6f}" for v in (h, w, l, *loc, ry)]
    if with_score:
        fields.append(f"{r.score:.6f}")
    return " ".join(fields)


def write_kitti(outputs: Iterable[FrameOutput], path, with_score: bool = False) -> None:
    try:
        with open(path, "w") as f:
            for o in outputs:
                for r in o.records:
                    f.write(kitti_row(o.frame_index, r, with_score) + "\n")
    except OSError as e:
        raise DataError(f"cannot write ({e.strerror})", path) from None


def write_jsonl(rows: Iterable[dict], path) -> None:
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)
