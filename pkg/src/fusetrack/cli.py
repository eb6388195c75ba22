"""``fusetrack`` command line: track, eval and synth subcommands.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import kernels
from .config import ConfigError, TrackerConfig, load_config
from .dataio import (
    DataError,
    build_frames,
    ensure_dir,
    fit_to_rig,
    load_rig,
    merge_detections,
    parse_detections,
    parse_poses,
    read_json,
    rig_to_dict,
    write_json,
    write_jsonl,
    write_kitti,
)
from .evalharness.metrics import CRITERIA, EvalError, MotMetrics, evaluate
from .evalharness.scenario import Scenario, ScenarioError, generate, with_seed
from .geometry import GeometryError
from .tracker import SequencingError, Tracker

log = logging.getLogger("fusetrack")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _existing(path: Optional[str], flag: str) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{flag}: no such file or directory: {path}")
    return p


# -- track -------------------------------------------------------------------------

def _track_one(seq, frames, rig, cfg):
    tracker = Tracker(rig.cameras, cfg, rig.ground_axes)
    t0 = time.perf_counter()
    outputs = tracker.run(frames)
    elapsed = time.perf_counter() - t0
    return seq, outputs, elapsed, tracker.stats


def cmd_track(args) -> int:
    cfg = load_config(_existing(args.config, "--config")) if args.config else TrackerConfig()
    if args.ablation == "no-2d":
        cfg = cfg.with_overrides(no_2d=True)
    if args.metric:
        cfg = cfg.with_overrides(metric=args.metric)
    if args.dump_config:
        print(json.dumps(cfg.to_dict(), indent=2))
        return EXIT_OK
    missing = [f for f, v in (("--dets3d", args.dets3d), ("--rig", args.rig), ("--out", args.out)) if v is None]
    if missing:
        raise UsageError(f"track requires {', '.join(missing)}")
    d3 = parse_detections(_existing(args.dets3d, "--dets3d"))
    d2 = parse_detections(_existing(args.dets2d, "--dets2d")) if args.dets2d else {}
    dets = merge_detections(d3, d2)
    rig = load_rig(_existing(args.rig, "--rig"), frame=args.calib_frame)
    clipped = fit_to_rig(dets, rig)
    if clipped:
        log.warning("clipped or dropped %d 2D boxes reaching outside their image", clipped)
    poses = parse_poses(_existing(args.poses, "--poses")) if args.poses else {}
    unknown = set(poses) - set(dets)
    seqs = sorted(set(dets) | unknown)
    jobs = [(s, build_frames(dets.get(s, {}), poses.get(s))) for s in seqs]

    out = Path(args.out)
    ensure_dir(out)
    kernels.warmup()
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(lambda job: _track_one(job[0], job[1], rig, cfg), jobs))
    for seq, outputs, elapsed, stats in results:
        if args.format == "kitti":
            write_kitti(outputs, out / f"{seq}.txt", args.kitti_score)
        else:
            write_json(outputs, out / f"{seq}.json", seq)
        n = len(outputs)
        fps = n / elapsed if elapsed > 0 else math.inf
        print(
            f"seq {seq}: {n} frames in {elapsed:.3f} s ({fps:.1f} frames/s); "
            f"fused_pairs={stats['fused_pairs']} stage1_matches={stats['stage1_matches']} "
            f"stage2_matches={stats['stage2_matches']} births={stats['births']} "
            f"terminations={stats['terminations']} backend={kernels.backend}"
        )
    return EXIT_OK


# -- eval --------------------------------------------------------------------------

def _track_files(path: Path) -> dict[str, Path]:
    if path.is_dir():
        return {p.stem: p for p in sorted(path.glob("*.json"))}
    return {path.stem: path}


def cmd_eval(args) -> int:
    gt_files = _track_files(_existing(args.gt, "--gt"))
    hyp_files = _track_files(_existing(args.hyp, "--hyp"))
    if len(gt_files) == 1 and len(hyp_files) == 1:
        pairs = [(next(iter(gt_files.values())), next(iter(hyp_files.values())))]
    else:
        missing = sorted(set(gt_files) - set(hyp_files))
        if missing:
            raise EvalError(f"no hypothesis file for sequences {missing}")
        pairs = [(gt_files[s], hyp_files[s]) for s in sorted(gt_files)]
    total: Optional[MotMetrics] = None
    for g, h in pairs:
        _, gt = read_json(g)
        _, hyp = read_json(h)
        m = evaluate(gt, hyp, args.criterion, args.min_score)
        total = m if total is None else total + m
    print(total.to_json() if args.json else total.to_text())
    return EXIT_OK


# -- synth -------------------------------------------------------------------------

def _det3d_row(seq, d):
    b = d.box
    return {"seq": seq, "frame": d.frame_index, "type": "3d", "class": d.class_id,
            "xyz": list(b.position), "hwl": list(b.dimensions), "yaw": b.yaw, "score": d.score}


def _det2d_row(seq, d):
    b = d.box
    return {"seq": seq, "frame": d.frame_index, "type": "2d", "class": d.class_id, "camera": b.camera_id,
            "box": [b.left, b.top, b.right, b.bottom], "score": d.score}


def cmd_synth(args) -> int:
    path = _existing(args.scenario, "--scenario")
    try:
        doc = json.loads(path.read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ScenarioError(f"{path}: cannot read scenario ({e})") from None
    sc = Scenario.from_dict(doc)
    if args.seed is not None:
        sc = with_seed(sc, args.seed)
    out = Path(args.out)
    ensure_dir(out / "gt")
    seqs = generate(sc)
    rows3, rows2, pose_rows = [], [], []
    for s in seqs:
        for f, fd in s.raw.items():
            rows3.extend(_det3d_row(s.name, d) for d in fd.dets3d)
            for cam in sorted(fd.dets2d_by_camera):
                rows2.extend(_det2d_row(s.name, d) for d in fd.dets2d_by_camera[cam])
        pose_rows.extend({"seq": s.name, "frame": f, "pose": p.tolist()} for f, p in s.poses.items())
        write_json(s.gt, out / "gt" / f"{s.name}.json", s.name)
    write_jsonl(rows3, out / "dets3d.jsonl")
    write_jsonl(rows2, out / "dets2d.jsonl")
    write_jsonl(pose_rows, out / "poses.jsonl")
    (out / "rig.json").write_text(json.dumps(rig_to_dict(sc.rig), indent=2) + "\n")
    print(f"wrote {len(seqs)} sequence(s), {len(rows3)} 3D and {len(rows2)} 2D detections to {out}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fusetrack", description="Camera and LiDAR fusion multi-object tracker.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("track", help="track detections, one output file per sequence")
    t.add_argument("--dets3d", help="3D detections (JSON lines)")
    t.add_argument("--dets2d", help="2D detections (JSON lines)")
    t.add_argument("--rig", help="camera rig: native JSON or KITTI calib text")
    t.add_argument("--calib-frame", choices=("rect", "velo"), default="rect",
                   help="frame of 3D detections when --rig is a KITTI calib file")
    t.add_argument("--poses", help="rig-to-world poses (JSON lines)")
    t.add_argument("--config", help="JSON config layered over the built-in defaults")
    t.add_argument("--out", help="output directory")
    t.add_argument("--format", choices=("kitti", "json"), default="json")
    t.add_argument("--kitti-score", action="store_true",
                   help="append the track score as an 18th KITTI field (submission layout)")
    t.add_argument("--ablation", choices=("no-2d",), help="disable the image modality")
    t.add_argument("--metric", choices=("scaled_distance", "planar_distance", "iou_3d"), help="override the first-stage metric")
    t.add_argument("--jobs", type=int, default=1, help="sequences tracked concurrently")
    t.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="CLEAR-MOT metrics of tracks against ground truth")
    e.add_argument("--gt", required=True, help="ground-truth track file or directory")
    e.add_argument("--hyp", required=True, help="hypothesis track file or directory")
    e.add_argument("--criterion", choices=CRITERIA, default="iou2d")
    e.add_argument("--min-score", type=float, default=-math.inf, help="ignore hypotheses scoring below this")
    e.add_argument("--json", action="store_true", help="print metrics as JSON")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic scenario")
    s.add_argument("--scenario", required=True, help="scenario JSON")
    s.add_argument("--seed", type=int, help="override the scenario seed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"fusetrack: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError, ScenarioError, EvalError, GeometryError, SequencingError) as e:
        print(f"fusetrack: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"fusetrack: DataError: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
