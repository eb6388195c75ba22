"""CLEAR-MOT scoring with greedy per-frame correspondence."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from ..association import greedy_match
from ..constants import GROUND_AXES
from ..dataio import FrameOutput, TrackRecord
from ..geometry import iou_2d, planar_distance

CRITERIA = ("iou2d", "dist3d")
IOU_MIN = 0.5
DIST_MAX = 2.0


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class MotMetrics:
    mota: float
    recall: float
    precision: float
    id_switches: int
    false_positives: int
    misses: int
    gt_count: int
    matches: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, idsw: int, gt: int) -> "MotMetrics":
        mota = 1.0 - (fn + fp + idsw) / gt if gt > 0 else math.nan
        recall = tp / gt if gt > 0 else math.nan
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        return cls(mota, recall, precision, idsw, fp, fn, gt, tp)

    def __add__(self, other: "MotMetrics") -> "MotMetrics":
        return MotMetrics.from_counts(
            self.matches + other.matches,
            self.false_positives + other.false_positives,
            self.misses + other.misses,
            self.id_switches + other.id_switches,
            self.gt_count + other.gt_count,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def to_text(self) -> str:
        rows = [
            ("MOTA", f"{self.mota:.4f}"),
            ("Recall", f"{self.recall:.4f}"),
            ("Precision", f"{self.precision:.4f}"),
            ("IDSW", str(self.id_switches)),
            ("FP", str(self.false_positives)),
            ("FN", str(self.misses)),
            ("GT", str(self.gt_count)),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>10}" for k, v in rows)


def _items(records: Iterable[TrackRecord], criterion: str, min_score: float = -math.inf):
    if criterion == "iou2d":
        return [r for r in records if r.box2d is not None and r.score >= min_score]
    return [r for r in records if r.box3d is not None and r.score >= min_score]


def _similarity(g: TrackRecord, h: TrackRecord, criterion: str, ground_axes) -> float:
    """Higher is better; -inf when the pair fails the criterion."""
    if criterion == "iou2d":
        if g.box2d.camera_id != h.box2d.camera_id:
            return -math.inf
        v = iou_2d(g.box2d, h.box2d)
        return v if v >= IOU_MIN else -math.inf
    d = planar_distance(g.box3d, h.box3d, ground_axes)
    return -d if d <= DIST_MAX else -math.inf


def evaluate(
    gt: Sequence[FrameOutput],
    hyp: Sequence[FrameOutput],
    criterion: str = "dist3d",
    min_score: float = -math.inf,
    ground_axes=GROUND_AXES,
) -> MotMetrics:
    """Score one sequence.

    Per frame, correspondences from the previous frame are kept when they
    still satisfy the criterion; the rest are matched greedily by best
    similarity. A ground-truth object matched to a different hypothesis id
    than its last match counts one ID switch. Hypotheses scoring below
    ``min_score`` are ignored.
    """
    if criterion not in CRITERIA:
        raise EvalError(f"criterion must be one of {CRITERIA}")
    if len(gt) != len(hyp):
        raise EvalError(f"frame count mismatch: {len(gt)} ground-truth vs {len(hyp)} hypothesis frames")
    tp = fp = fn = idsw = n_gt = 0
    last_match: dict[int, int] = {}
    prev: dict[int, int] = {}
    for g_frame, h_frame in zip(gt, hyp):
        if g_frame.frame_index != h_frame.frame_index:
            raise EvalError(f"frame index mismatch: {g_frame.frame_index} vs {h_frame.frame_index}")
        gs = _items(g_frame.records, criterion)
        hs = _items(h_frame.records, criterion, min_score)
        n_gt += len(gs)
        sim = np.full((len(gs), len(hs)), -np.inf)
        for i, g in enumerate(gs):
            for j, h in enumerate(hs):
                sim[i, j] = _similarity(g, h, criterion, ground_axes)
        hyp_col = {h.track_id: j for j, h in enumerate(hs)}
        pairs: list[tuple[int, int]] = []
        g_used, h_used = set(), set()
        for i, g in enumerate(gs):
            j = hyp_col.get(prev.get(g.track_id, -1))
            if j is not None and j not in h_used and np.isfinite(sim[i, j]):
                pairs.append((i, j))
                g_used.add(i)
                h_used.add(j)
        rest_g = [i for i in range(len(gs)) if i not in g_used]
        rest_h = [j for j in range(len(hs)) if j not in h_used]
        if rest_g and rest_h:
            ms = greedy_match(sim[np.ix_(rest_g, rest_h)], -math.inf, "maximize")
            pairs.extend((rest_g[r], rest_h[c]) for r, c, _ in ms.matches)
        current: dict[int, int] = {}
        for i, j in pairs:
            gid, hid = gs[i].track_id, hs[j].track_id
            if gid in last_match and last_match[gid] != hid:
                idsw += 1
            last_match[gid] = hid
            current[gid] = hid
        prev = current
        tp += len(pairs)
        fp += len(hs) - len(pairs)
        fn += len(gs) - len(pairs)
    return MotMetrics.from_counts(tp, fp, fn, idsw, n_gt)
