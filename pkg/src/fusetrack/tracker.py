"""Per-sequence tracking loop: fuse, predict, two association stages, update,
birth, lifecycle and reporting."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .association import Stage2Track, associate_stage1_arrays, associate_stage2
from .config import TrackerConfig
from .constants import EPS_DIM, GROUND_AXES
from .dataio import FrameInput, FrameOutput, TrackRecord
from .fusion import FusedInstance, fuse_frame
from .geometry import BoxImage, CameraModel, boxes_to_array, project_boxes
from .motion import FilterState, init_filter, predict, state_to_box, update

log = logging.getLogger(__name__)


class SequencingError(RuntimeError):
    pass


@dataclass
class Track:
    track_id: int
    class_id: str
    filter: Optional[FilterState] = None
    last_box2d: Optional[BoxImage] = None
    last_box2d_frame: Optional[int] = None
    score: float = 0.0
    frames_since_any_update: int = 0
    frames_since_2d_update: int = 0
    matched_this_frame: bool = False
    confirmed: bool = False
    mask_payload: Optional[str] = None
    degenerate: bool = False

    @property
    def has_3d(self) -> bool:
        return self.filter is not None


def update_track(t: Track, inst: FusedInstance, frame_index: int, cfg: TrackerConfig, r_diag=None) -> Track:
    """Apply a matched instance to ``t`` in place and return it.

    3D evidence drives a Kalman update (or initializes the filter); 2D
    evidence overwrites the image box. Without 3D evidence the filter keeps
    its prediction for this frame.
    """
    if inst.det3d is not None:
        if t.filter is None:
            t.filter = init_filter(inst.det3d.box, cfg.noise)
        else:
            t.filter = update(t.filter, inst.det3d.box, cfg.noise.r_diag() if r_diag is None else r_diag)
        t.score = inst.det3d.score
    if inst.det2d is not None:
        t.last_box2d = inst.det2d.box
        t.last_box2d_frame = frame_index
        t.frames_since_2d_update = 0
        t.mask_payload = inst.det2d.mask_payload
        if t.filter is None:
            t.score = max(t.score, inst.det2d.score)
    t.frames_since_any_update = 0
    t.matched_this_frame = True
    return t


def lifecycle_sweep(tracks: Sequence[Track], cfg: TrackerConfig) -> tuple[list[Track], list[Track]]:
    """Split into (kept, terminated) and refresh each kept track's confirmation."""
    kept, terminated = [], []
    for t in tracks:
        p = cfg.params(t.class_id)
        if t.frames_since_any_update >= p.age_max:
            terminated.append(t)
            continue
        if cfg.no_2d:
            t.confirmed = t.matched_this_frame
        else:
            t.confirmed = (
                t.matched_this_frame and t.last_box2d is not None and t.frames_since_2d_update <= p.age_2d
            )
        kept.append(t)
    return kept, terminated


def reported_score(t: Track, cfg: TrackerConfig) -> float:
    if t.confirmed:
        return t.score
    k = t.frames_since_any_update if cfg.no_2d else t.frames_since_2d_update
    return t.score * 0.5**k


def report(tracks: Sequence[Track], frame_index: int, cams: Sequence[CameraModel], cfg: TrackerConfig) -> FrameOutput:
    """Records for the post-lifecycle track set, ordered by track id.

    3D records come from every track with a filter (unconfirmed scores are
    halved per frame without a 2D update). Image boxes are attached only for
    confirmed tracks: the clipped projection into the camera where it is
    largest, or the last observed box for tracks without a filter.
    """
    tracks = sorted(tracks, key=lambda t: t.track_id)
    boxes = {}
    for t in tracks:
        if t.filter is not None:
            boxes[t.track_id] = state_to_box(t.filter)[0]
    image: dict[int, BoxImage] = {}
    proj_ids = [t.track_id for t in tracks if t.confirmed and t.filter is not None]
    if proj_ids and cams:
        arr = boxes_to_array([boxes[i] for i in proj_ids])
        best_area = np.zeros(len(proj_ids))
        for cam in sorted(cams, key=lambda c: c.camera_id):
            proj, valid = project_boxes(arr, cam)
            area = (proj[:, 2] - proj[:, 0]) * (proj[:, 3] - proj[:, 1])
            rows = proj.tolist()
            for k in np.flatnonzero(valid & (area > best_area)).tolist():
                best_area[k] = area[k]
                image[proj_ids[k]] = BoxImage._unchecked(cam.camera_id, *rows[k])
    records = []
    for t in tracks:
        box2d = None
        if t.confirmed:
            box2d = image.get(t.track_id) if t.filter is not None else t.last_box2d
        box3d = boxes.get(t.track_id)
        if box3d is None and box2d is None:
            continue
        records.append(
            TrackRecord(
                track_id=t.track_id,
                class_id=t.class_id,
                box3d=box3d,
                score=reported_score(t, cfg),
                confirmed=t.confirmed,
                box2d=box2d,
                mask_payload=t.mask_payload if box2d is not None else None,
            )
        )
    return FrameOutput(frame_index, records)


class Tracker:
    """Tracks one sequence. Feed frames in increasing ``frame_index`` order."""

    def __init__(self, cams: Sequence[CameraModel], config: TrackerConfig = TrackerConfig(), ground_axes=GROUND_AXES):
        self.rig = list(cams)
        self.config = config
        self.ground_axes = tuple(ground_axes)
        self.tracks: list[Track] = []
        self.stats: Counter = Counter()
        self._next_id = 1
        self._last_frame: Optional[int] = None
        self._q = config.noise.q_diag()
        self._r = config.noise.r_diag()

    def frame_cameras(self, ego_pose: Optional[np.ndarray]) -> list[CameraModel]:
        """Rig cameras for a frame whose ego pose (rig to world) is ``ego_pose``."""
        if ego_pose is None:
            return self.rig
        pose = np.asarray(ego_pose, dtype=float)
        if np.array_equal(pose, np.eye(4)):
            return self.rig
        inv = np.eye(4)
        R = pose[:3, :3]
        inv[:3, :3] = R.T
        inv[:3, 3] = -R.T @ pose[:3, 3]
        return [c.moved(inv) for c in self.rig]

    def _new_track(self, inst: FusedInstance, frame_index: int) -> Track:
        t = Track(self._next_id, inst.class_id)
        self._next_id += 1
        update_track(t, inst, frame_index, self.config, self._r)
        if inst.det2d is None:
            # The birth frame itself passed without a 2D update.
            t.frames_since_2d_update = 1
        return t

    def step(self, frame: FrameInput) -> FrameOutput:
        if self._last_frame is not None and frame.frame_index <= self._last_frame:
            raise SequencingError(f"frame {frame.frame_index} arrived after frame {self._last_frame}")
        self._last_frame = frame.frame_index
        cfg = self.config
        cams = self.frame_cameras(frame.ego_pose)

        for t in self.tracks:
            t.matched_this_frame = False
            t.frames_since_any_update += 1
            t.frames_since_2d_update += 1

        # (1) fusion
        if cfg.no_2d:
            instances = [FusedInstance(d, None) for d in frame.dets3d]
        else:
            theta_f = {c: cfg.params(c).theta_fusion for c in {d.class_id for d in frame.dets3d}}
            instances = fuse_frame(frame.dets3d, frame.dets2d_by_camera, cams, theta_f)
        self.stats["fused_pairs"] += sum(1 for i in instances if i.det3d is not None and i.det2d is not None)

        # (2) predict
        for t in self.tracks:
            if t.filter is not None:
                t.filter = predict(t.filter, self._q)

        # (3) + (4) association per class
        matched: list[tuple[Track, FusedInstance]] = []
        unmatched_inst: list[FusedInstance] = []
        for cls in sorted({i.class_id for i in instances} | {t.class_id for t in self.tracks}):
            p = cfg.params(cls)
            inst_c = [i for i in instances if i.class_id == cls]
            tracks_c = [t for t in self.tracks if t.class_id == cls]
            inst3 = [i for i in inst_c if i.det3d is not None]
            trk3 = [t for t in tracks_c if t.filter is not None]
            a = np.array([i.det3d.box.as_array() for i in inst3]) if inst3 else np.empty((0, 7))
            b = self._predicted_array(trk3)
            s1 = associate_stage1_arrays(a, b, p.theta_3d, cfg.metric, self.ground_axes)
            self.stats["stage1_matches"] += len(s1.matches)
            matched.extend((trk3[c], inst3[r]) for r, c, _ in s1.matches)
            taken = {id(trk3[c]) for _, c, _ in s1.matches}
            left_tracks = [t for t in tracks_c if id(t) not in taken]
            left3 = [inst3[r] for r in s1.unmatched_rows]
            if cfg.no_2d:
                unmatched_inst.extend(left3)
                continue
            cand = [i for i in left3 if i.det2d is not None] + [i for i in inst_c if i.det3d is None]
            refs = [
                Stage2Track(self._clamped(t.filter.mean[:7]) if t.filter is not None else None, t.last_box2d)
                for t in left_tracks
            ]
            s2 = associate_stage2(cand, refs, p.theta_2d, cams)
            self.stats["stage2_matches"] += len(s2.matches)
            matched.extend((left_tracks[c], cand[r]) for r, c, _ in s2.matches)
            used = {id(cand[r]) for r, _, _ in s2.matches}
            unmatched_inst.extend(i for i in left3 if id(i) not in used)
            unmatched_inst.extend(i for i in inst_c if i.det3d is None and id(i) not in used)

        # (5) state update
        for t, inst in matched:
            update_track(t, inst, frame.frame_index, cfg, self._r)

        # (6) births, in instance order
        order = {id(i): k for k, i in enumerate(instances)}
        for inst in sorted(unmatched_inst, key=lambda i: order[id(i)]):
            self.tracks.append(self._new_track(inst, frame.frame_index))
            self.stats["births"] += 1

        # (7) lifecycle
        self.tracks, dead = lifecycle_sweep(self.tracks, cfg)
        self.stats["terminations"] += len(dead)
        self.stats["frames"] += 1

        # (8) reporting
        return report(self.tracks, frame.frame_index, cams, cfg)

    @staticmethod
    def _clamped(v: np.ndarray) -> np.ndarray:
        if v[4] > 0.0 and v[5] > 0.0 and v[6] > 0.0:
            return v
        v = v.copy()
        v[4:7] = np.where(v[4:7] > 0.0, v[4:7], EPS_DIM)
        return v

    def _predicted_array(self, tracks: Sequence[Track]) -> np.ndarray:
        if not tracks:
            return np.empty((0, 7))
        return np.array([self._clamped(t.filter.mean[:7]) for t in tracks])

    def run(self, frames) -> list[FrameOutput]:
        return [self.step(f) for f in frames]
