"""Synthetic driving scenes with controllable detector failures.

Objects move at constant velocity along lanes parallel to the camera axis.
Each frame the generator emits rig-frame 3D detections for objects inside
the sensing range and image detections from projecting ground truth, with
independent dropout per sensor, optional noise and 3D false positives.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from ..constants import CLASSES
from ..dataio import (
    FrameDetections,
    FrameInput,
    FrameOutput,
    Rig,
    TrackRecord,
    build_frames,
    invert_pose,
    transform_box,
)
from ..fusion import Detection2D, Detection3D
from ..geometry import BoxImage, Box3D, CameraModel, project_box

# KITTI-like front camera: P2 intrinsics of the raw 2011_09_26 drives.
KITTI_K = np.array([[721.5377, 0.0, 609.5593], [0.0, 721.5377, 172.854], [0.0, 0.0, 1.0]])
KITTI_SIZE = (1242.0, 375.0)
CAMERA_HEIGHT = 1.65
MAX_STEP = 5.0  # meters per frame; keeps ground-truth trajectories continuous

_SIZES = {
    "car": (1.52, 1.63, 3.88),
    "pedestrian": (1.75, 0.66, 0.84),
    "bicycle": (1.74, 0.60, 1.76),
    "bus": (3.2, 2.9, 11.0),
    "motorcycle": (1.5, 0.8, 2.1),
    "trailer": (3.5, 2.5, 10.0),
    "truck": (3.0, 2.5, 7.5),
}
_SPEEDS = {"pedestrian": (0.05, 0.15), "bicycle": (0.2, 0.5)}
_DEFAULT_SPEED = (0.3, 1.5)


class ScenarioError(ValueError):
    pass


def default_rig() -> Rig:
    return Rig([CameraModel("cam2", KITTI_K, np.eye(4), KITTI_SIZE)])


@dataclass(frozen=True)
class DetectionModel:
    p_drop3d: float = 0.0
    p_drop2d: float = 0.0
    pos_noise: float = 0.0
    yaw_noise: float = 0.0
    fp_rate: float = 0.0
    range3d: float = 80.0
    score_range: tuple[float, float] = (0.6, 0.95)

    def __post_init__(self):
        for name in ("p_drop3d", "p_drop2d"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ScenarioError(f"{name} must lie in [0, 1]")
        if min(self.pos_noise, self.yaw_noise, self.fp_rate) < 0 or self.range3d <= 0:
            raise ScenarioError("noise, false-positive rate and range must be non-negative")
        lo, hi = self.score_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ScenarioError("score_range must satisfy 0 <= lo <= hi <= 1")
        object.__setattr__(self, "score_range", (float(lo), float(hi)))


@dataclass(frozen=True)
class ObjectSpec:
    """A ground-truth object: world-frame start box and per-frame velocity."""

    track_id: int
    class_id: str
    start: tuple[float, float, float]
    velocity: tuple[float, float, float]
    hwl: tuple[float, float, float]
    yaw: float
    first_frame: int = 0
    last_frame: Optional[int] = None

    def __post_init__(self):
        if self.class_id not in CLASSES:
            raise ScenarioError(f"unknown class {self.class_id!r}")
        if math.hypot(*self.velocity) > MAX_STEP:
            raise ScenarioError(f"object {self.track_id} moves more than {MAX_STEP} m per frame")

    def box_at(self, frame: int) -> Box3D:
        k = frame - self.first_frame
        pos = tuple(s + k * v for s, v in zip(self.start, self.velocity))
        return Box3D(pos, self.hwl, self.yaw)

    def alive(self, frame: int) -> bool:
        return frame >= self.first_frame and (self.last_frame is None or frame <= self.last_frame)


@dataclass(frozen=True)
class Scenario:
    num_frames: int = 40
    num_objects: int = 8
    classes: tuple[str, ...] = ("car", "pedestrian")
    objects: Optional[tuple[ObjectSpec, ...]] = None
    detection: DetectionModel = DetectionModel()
    ego_speed: float = 0.0
    sequences: int = 1
    seed: int = 0
    rig: Rig = field(default_factory=default_rig)

    def __post_init__(self):
        if self.num_frames < 0 or self.num_objects < 0 or self.sequences < 1:
            raise ScenarioError("num_frames, num_objects must be >= 0 and sequences >= 1")
        bad = [c for c in self.classes if c not in CLASSES]
        if bad or not self.classes:
            raise ScenarioError(f"classes must be a non-empty subset of {CLASSES}")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Scenario":
        from ..dataio import _camera_from_doc

        if not isinstance(doc, Mapping):
            raise ScenarioError("scenario must be a JSON object")
        known = {"num_frames", "num_objects", "classes", "objects", "detection", "ego_speed", "sequences", "seed", "rig"}
        extra = set(doc) - known
        if extra:
            raise ScenarioError(f"unknown scenario keys: {sorted(extra)}")
        try:
            kw: dict[str, Any] = {k: doc[k] for k in ("num_frames", "num_objects", "ego_speed", "sequences", "seed") if k in doc}
            for k in ("num_frames", "num_objects", "sequences", "seed"):
                if k in kw and (isinstance(kw[k], bool) or not isinstance(kw[k], int)):
                    raise ScenarioError(f"{k} must be an integer")
            if "classes" in doc:
                kw["classes"] = tuple(doc["classes"])
            if "detection" in doc:
                det = dict(doc["detection"])
                if "score_range" in det:
                    det["score_range"] = tuple(det["score_range"])
                kw["detection"] = DetectionModel(**det)
            if "objects" in doc:
                objs = []
                for k, o in enumerate(doc["objects"]):
                    o = dict(o)
                    o.setdefault("track_id", k + 1)
                    for key in ("start", "velocity", "hwl"):
                        o[key] = tuple(float(v) for v in o[key])
                    objs.append(ObjectSpec(**o))
                kw["objects"] = tuple(objs)
            if "rig" in doc:
                cams = [_camera_from_doc(c, k) for k, c in enumerate(doc["rig"]["cameras"])]
                kw["rig"] = Rig(cams)
            return cls(**kw)
        except ScenarioError:
            raise
        except (TypeError, ValueError, KeyError, AttributeError, IndexError, OverflowError) as e:
            raise ScenarioError(f"invalid scenario: {e}") from None


@dataclass
class SyntheticSequence:
    name: str
    raw: dict[int, FrameDetections]
    poses: dict[int, np.ndarray]
    frames: list[FrameInput]
    gt: list[FrameOutput]
    objects: tuple[ObjectSpec, ...]


def random_objects(rng: np.random.Generator, n: int, classes: Sequence[str], num_frames: int) -> tuple[ObjectSpec, ...]:
    """Objects on 4 m lanes inside the front camera's view, each lane moving at
    one speed so objects in a lane never close in."""
    lanes = np.arange(-12.0, 12.1, 4.0)
    per_lane = int(math.ceil(n / len(lanes))) if n else 0
    lane_ids = rng.permutation(len(lanes))
    objs = []
    k = 0
    for li in lane_ids:
        if k >= n:
            break
        cls = classes[int(rng.integers(len(classes)))]
        lo, hi = _SPEEDS.get(cls, _DEFAULT_SPEED)
        speed = rng.uniform(lo, hi) * (1.0 if rng.random() < 0.5 else -1.0)
        h, w, l = _SIZES[cls]
        yaw = -math.pi / 2 if speed > 0 else math.pi / 2
        slots = rng.permutation(np.arange(15.0, 75.0, 12.0))[:per_lane]
        for z0 in slots:
            if k >= n:
                break
            objs.append(
                ObjectSpec(
                    track_id=k + 1,
                    class_id=cls,
                    start=(float(lanes[li]), CAMERA_HEIGHT - 0.5 * h, float(z0)),
                    velocity=(0.0, 0.0, float(speed)),
                    hwl=(h, w, l),
                    yaw=yaw,
                )
            )
            k += 1
    return tuple(objs)


def _ego_pose(frame: int, ego_speed: float) -> np.ndarray:
    pose = np.eye(4)
    pose[2, 3] = ego_speed * frame
    return pose


def _largest_projection(box: Box3D, cams: Sequence[CameraModel]) -> Optional[BoxImage]:
    best = None
    for cam in sorted(cams, key=lambda c: c.camera_id):
        b = project_box(box, cam)
        if b is not None and (best is None or b.area > best.area):
            best = b
    return best


def generate_sequence(sc: Scenario, rng: np.random.Generator, name: str) -> SyntheticSequence:
    objs = sc.objects if sc.objects is not None else random_objects(rng, sc.num_objects, sc.classes, sc.num_frames)
    dm = sc.detection
    raw: dict[int, FrameDetections] = {}
    poses: dict[int, np.ndarray] = {}
    gt: list[FrameOutput] = []
    lo, hi = dm.score_range
    for f in range(sc.num_frames):
        pose = _ego_pose(f, sc.ego_speed)
        inv = invert_pose(pose)
        poses[f] = pose
        cams = [c.moved(inv) for c in sc.rig.cameras]
        fd = FrameDetections()
        records = []
        for obj in objs:
            if not obj.alive(f):
                continue
            box = obj.box_at(f)
            box2d = _largest_projection(box, cams)
            records.append(TrackRecord(obj.track_id, obj.class_id, box, 1.0, True, box2d))
            rig_box = transform_box(box, inv) if sc.ego_speed else box
            dist = math.hypot(rig_box.position[0], rig_box.position[2])
            # Fixed draw order keeps streams aligned across parameter changes.
            u3, u2 = rng.random(), rng.random()
            noise = rng.normal(size=4)
            s3, s2 = rng.uniform(lo, hi), rng.uniform(lo, hi)
            if dist <= dm.range3d and u3 >= dm.p_drop3d:
                det_box = rig_box
                if dm.pos_noise or dm.yaw_noise:
                    pos = tuple(p + dm.pos_noise * e for p, e in zip(rig_box.position, noise[:3]))
                    det_box = Box3D(pos, rig_box.dimensions, rig_box.yaw + dm.yaw_noise * noise[3])
                fd.dets3d.append(Detection3D(det_box, float(s3), obj.class_id, f))
            for cam in cams:
                b = project_box(box, cam)
                if b is not None and u2 >= dm.p_drop2d:
                    fd.dets2d_by_camera.setdefault(cam.camera_id, []).append(Detection2D(b, float(s2), obj.class_id, f))
        n_fp = int(rng.poisson(dm.fp_rate)) if dm.fp_rate > 0 else 0
        for _ in range(n_fp):
            cls = sc.classes[int(rng.integers(len(sc.classes)))]
            h, w, l = _SIZES[cls]
            r = dm.range3d * math.sqrt(rng.random())
            th = rng.uniform(-math.pi, math.pi)
            box = Box3D((r * math.sin(th), CAMERA_HEIGHT - 0.5 * h, r * math.cos(th)), (h, w, l), rng.uniform(-math.pi, math.pi))
            fd.dets3d.append(Detection3D(box, float(rng.uniform(lo, hi)), cls, f))
        if fd.dets3d or fd.dets2d_by_camera:
            raw[f] = fd
        gt.append(FrameOutput(f, records))
    frames = build_frames(raw, poses)
    return SyntheticSequence(name, raw, poses, frames, gt, objs)


def generate(sc: Scenario) -> list[SyntheticSequence]:
    """All sequences of a scenario; one seeded generator drives every draw."""
    rng = np.random.default_rng(sc.seed)
    return [generate_sequence(sc, rng, f"{k:04d}") for k in range(sc.sequences)]


def scenario_to_dict(sc: Scenario) -> dict:
    doc = {
        "num_frames": sc.num_frames,
        "num_objects": sc.num_objects,
        "classes": list(sc.classes),
        "detection": {**asdict(sc.detection), "score_range": list(sc.detection.score_range)},
        "ego_speed": sc.ego_speed,
        "sequences": sc.sequences,
        "seed": sc.seed,
    }
    if sc.objects is not None:
        doc["objects"] = [{**asdict(o), "start": list(o.start), "velocity": list(o.velocity), "hwl": list(o.hwl)} for o in sc.objects]
    return doc


def with_seed(sc: Scenario, seed: int) -> Scenario:
    return replace(sc, seed=seed)


def throughput_scenario(num_frames: int = 200, seed: int = 0) -> Scenario:
    """Dense KITTI-like scene: 40 cars in view, 30 of them inside 3D range.

    Every frame carries 30 3D and 40 2D detections for the single camera.
    """
    objs = []
    k = 0
    for z in (20.0, 32.0, 44.0, 62.0):
        for x in np.arange(-16.0, 16.1, 32.0 / 9.0):
            h, w, l = _SIZES["car"]
            objs.append(ObjectSpec(k + 1, "car", (float(x), CAMERA_HEIGHT - 0.5 * h, z), (0.0, 0.0, 0.0), (h, w, l), -math.pi / 2))
            k += 1
    return Scenario(
        num_frames=num_frames,
        objects=tuple(objs),
        classes=("car",),
        detection=DetectionModel(pos_noise=0.05, yaw_noise=0.02, range3d=55.0),
        seed=seed,
    )
