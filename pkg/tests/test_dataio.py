import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fusetrack.dataio import (
    DataError,
    FrameDetections,
    FrameOutput,
    TrackRecord,
    build_frames,
    fit_to_rig,
    invert_pose,
    kitti_alpha,
    kitti_row,
    load_rig,
    parse_calibration,
    parse_detections,
    parse_poses,
    read_json,
    to_tracking_frame,
    transform_box,
    write_json,
    write_kitti,
)
from fusetrack.fusion import Detection3D
from fusetrack.geometry import Box3D, BoxImage

DATA = Path(__file__).parent / "data"
LINE3D = {"frame": 0, "type": "3d", "class": "car", "xyz": [1, 2, 3], "hwl": [1.5, 1.6, 3.9], "yaw": 0.1, "score": 0.95}
LINE2D = {"seq": "0001", "frame": 2, "type": "2d", "class": "pedestrian", "camera": "cam2",
          "box": [10, 20, 30, 80], "score": 0.5, "mask": "abc"}


def write_lines(path, docs):
    path.write_text("".join((d if isinstance(d, str) else json.dumps(d)) + "\n" for d in docs))
    return path


def test_parse_detection_schema(tmp_path):
    out = parse_detections(write_lines(tmp_path / "d.jsonl", [LINE3D, LINE2D]))
    (d3,) = out["0000"][0].dets3d
    assert d3.box == Box3D((1, 2, 3), (1.5, 1.6, 3.9), 0.1) and d3.score == 0.95
    (d2,) = out["0001"][2].dets2d_by_camera["cam2"]
    assert d2.mask_payload == "abc" and d2.box == BoxImage("cam2", 10, 20, 30, 80)


def test_frames_sorted(tmp_path):
    docs = [{**LINE3D, "frame": f} for f in (5, 1, 3)]
    assert list(parse_detections(write_lines(tmp_path / "d.jsonl", docs))["0000"]) == [1, 3, 5]


@pytest.mark.parametrize(
    "bad,msg",
    [
        ({**LINE3D, "score": 1.3}, "outside"),
        ({**LINE3D, "class": "tram"}, "accepted classes: car, pedestrian"),
        ({**LINE3D, "frame": -1}, "frame"),
        ({**LINE3D, "frame": 10**9}, "frame"),
        ({**LINE3D, "hwl": [1, 0, 1]}, "positive"),
        ({**LINE3D, "frame": True}, "integer"),
        ({**LINE2D, "box": [30, 20, 10, 80]}, "degenerate"),
        ("not json", "Expecting"),
    ],
)
def test_malformed_lines_report_line_numbers(tmp_path, bad, msg):
    path = write_lines(tmp_path / "d.jsonl", [LINE3D, bad])
    with pytest.raises(DataError, match=msg) as e:
        parse_detections(path)
    assert e.value.line == 2 and ":2:" in str(e.value)


def test_empty_file_is_not_an_error(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert parse_detections(tmp_path / "e.jsonl") == {}


def test_missing_and_binary_files(tmp_path):
    with pytest.raises(DataError):
        parse_detections(tmp_path / "nope.jsonl")
    (tmp_path / "b.jsonl").write_bytes(b"\xff\xfe\x00")
    with pytest.raises(DataError, match="UTF-8"):
        parse_detections(tmp_path / "b.jsonl")


# -- calibration ----------------------------------------------------------------------

def test_kitti_calib_sample_focal():
    for frame in ("rect", "velo"):
        (cam,) = parse_calibration(DATA / "kitti_calib_0000.txt", frame=frame)
        assert cam.intrinsics[0, 0] == 721.5377 and cam.intrinsics[1, 1] == 721.5377
        assert cam.intrinsics[0, 2] == 609.5593
    # P2 carries a small baseline offset relative to the rectified reference.
    rect = parse_calibration(DATA / "kitti_calib_0000.txt")[0]
    P2 = np.array([[721.5377, 0, 609.5593, 44.85728], [0, 721.5377, 172.854, 0.2163791], [0, 0, 1, 0.002745884]])
    np.testing.assert_allclose(rect.extrinsics[:3, 3], np.linalg.solve(P2[:, :3], P2[:, 3]), atol=1e-12)
    # The rect-frame projection reproduces P2 exactly.
    np.testing.assert_allclose(rect.intrinsics @ rect.extrinsics[:3], P2, atol=1e-9)


def test_kitti_calib_missing_key(tmp_path):
    text = (DATA / "kitti_calib_0000.txt").read_text().splitlines()
    p = tmp_path / "c.txt"
    p.write_text("\n".join(l for l in text if not l.startswith("P2")))
    with pytest.raises(DataError, match="'P2'"):
        parse_calibration(p)
    p.write_text("\n".join(l for l in text if not l.startswith("R_rect")))
    parse_calibration(p)  # rect frame does not need R0
    with pytest.raises(DataError, match="R0_rect"):
        parse_calibration(p, frame="velo")


def test_kitti_calib_rejects_bad_rotation(tmp_path):
    text = (DATA / "kitti_calib_0000.txt").read_text().replace("R_rect 9.999239", "R_rect 1.999239")
    p = tmp_path / "c.txt"
    p.write_text(text)
    with pytest.raises(DataError, match="orthonormal"):
        parse_calibration(p, frame="velo")


def test_identity_rig_json(tmp_path):
    K = [[500.0, 0, 320], [0, 500, 240], [0, 0, 1]]
    p = tmp_path / "rig.json"
    p.write_text(json.dumps({"cameras": [{"id": "front", "K": K, "image_size": [640, 480]}]}))
    rig = load_rig(p)
    np.testing.assert_array_equal(rig.cameras[0].intrinsics, K)
    np.testing.assert_array_equal(rig.cameras[0].extrinsics, np.eye(4))
    assert rig.ground_axes == (0, 2)


@pytest.mark.parametrize(
    "doc",
    [
        {"cameras": "x"},
        {"cameras": [{"id": "a", "K": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "image_size": [0, 10]}]},
        {"cameras": [{"id": "a", "K": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "image_size": [10, 10],
                      "extrinsics": [[2, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]}]},
        {"cameras": [], "ground_axes": [0, 1]},
    ],
)
def test_bad_rig_json(tmp_path, doc):
    p = tmp_path / "rig.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(DataError):
        load_rig(p)


def test_parse_poses(tmp_path):
    pose = np.eye(4)
    pose[0, 3] = 4.0
    p = write_lines(tmp_path / "p.jsonl", [{"frame": 1, "pose": pose.tolist()}])
    np.testing.assert_array_equal(parse_poses(p)["0000"][1], pose)
    bad = pose.copy()
    bad[0, 0] = 1.1
    with pytest.raises(DataError, match="orthonormal"):
        parse_poses(write_lines(tmp_path / "q.jsonl", [{"frame": 1, "pose": bad.tolist()}]))


# -- frame transforms -----------------------------------------------------------------

def dets():
    return [Detection3D(Box3D((1, 0.5, 12), (1.5, 1.6, 3.9), 0.4), 0.9, "car")]


def test_identity_and_translation():
    assert to_tracking_frame(dets(), np.eye(4))[0].box == dets()[0].box
    T = np.eye(4)
    T[0, 3] = 10
    b = to_tracking_frame(dets(), T)[0].box
    assert b.position == (11, 0.5, 12) and b.yaw == 0.4


def test_ego_yaw_adds_to_detection_yaw():
    a = math.pi / 2
    T = np.eye(4)
    T[:3, :3] = [[math.cos(a), 0, math.sin(a)], [0, 1, 0], [-math.sin(a), 0, math.cos(a)]]
    b = to_tracking_frame(dets(), T)[0].box
    assert b.yaw == pytest.approx(0.4 + a)
    assert b.dimensions == dets()[0].box.dimensions
    c = to_tracking_frame([Detection3D(Box3D((0, 0, 0), (1, 1, 1), 3.0), 0.5, "car")], T)[0].box
    assert c.yaw == pytest.approx(3.0 + a - 2 * math.pi)


@given(st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50), st.floats(-3, 3))
def test_transform_inverse_round_trip(theta, tx, tz, yaw):
    T = np.eye(4)
    T[:3, :3] = [[math.cos(theta), 0, math.sin(theta)], [0, 1, 0], [-math.sin(theta), 0, math.cos(theta)]]
    T[:3, 3] = [tx, 0.3, tz]
    b = Box3D((1.0, 0.5, 12.0), (1.5, 1.6, 3.9), yaw)
    back = transform_box(transform_box(b, T), invert_pose(T))
    np.testing.assert_allclose(back.position, b.position, atol=1e-9)
    assert math.cos(back.yaw - b.yaw) == pytest.approx(1.0, abs=1e-12)


def test_build_frames_fills_gaps():
    fd = FrameDetections(dets())
    frames = build_frames({2: fd})
    assert [f.frame_index for f in frames] == [0, 1, 2]
    assert frames[0].dets3d == [] and len(frames[2].dets3d) == 1


# -- writers --------------------------------------------------------------------------

def sample_outputs():
    box = Box3D((1.0, 0.9, 14.0), (1.5, 1.6, 3.9), -1.2)
    return [
        FrameOutput(0, [
            TrackRecord(1, "car", box, 0.9, True, BoxImage("cam2", 10.5, 20.25, 30.0, 80.0), "mask"),
            TrackRecord(2, "pedestrian", None, 0.4, True, BoxImage("cam2", 1, 2, 3, 4)),
            TrackRecord(3, "bicycle", box, 0.1, False),
        ]),
        FrameOutput(1, []),
    ]


def test_json_round_trip(tmp_path):
    out = sample_outputs()
    write_json(out, tmp_path / "t.json", "0042")
    seq, back = read_json(tmp_path / "t.json")
    assert seq == "0042" and back == out


def test_kitti_rows(tmp_path):
    write_kitti(sample_outputs(), tmp_path / "t.txt")
    rows = (tmp_path / "t.txt").read_text().splitlines()
    assert len(rows) == 3 and all(len(r.split(" ")) == 17 for r in rows)
    f = rows[0].split(" ")
    assert f[:5] == ["0", "1", "Car", "0", "0"]
    assert float(f[14]) == pytest.approx(0.9 + 0.75)  # bottom-center y
    assert float(f[5]) == pytest.approx(kitti_alpha(sample_outputs()[0].records[0].box3d), abs=1e-6)
    ped = rows[1].split(" ")
    assert ped[2] == "Pedestrian" and ped[10:13] == ["-1.000000"] * 3 and ped[13] == "-1000.000000"
    assert rows[2].split(" ")[6:10] == ["-1.0000"] * 4


def test_kitti_rows_with_score(tmp_path):
    write_kitti(sample_outputs(), tmp_path / "t.txt", with_score=True)
    rows = (tmp_path / "t.txt").read_text().splitlines()
    assert all(len(r.split(" ")) == 18 for r in rows)
    assert [float(r.split(" ")[-1]) for r in rows] == [0.9, 0.4, 0.1]


def test_unwritable_path(tmp_path):
    with pytest.raises(DataError):
        write_json(sample_outputs(), tmp_path / "missing" / "t.json")
    with pytest.raises(DataError):
        write_kitti(sample_outputs(), tmp_path / "missing" / "t.txt")


def test_kitti_alpha_straight_ahead():
    b = Box3D((0.0, 1.0, 10.0), (1, 1, 1), 0.5)
    assert kitti_alpha(b) == pytest.approx(0.5)
    assert kitti_row(0, TrackRecord(1, "car", b, 0.5, True)).count(" ") == 16
    assert kitti_row(0, TrackRecord(1, "car", b, 0.5, True), with_score=True).count(" ") == 17


# -- fuzzing --------------------------------------------------------------------------

def mutate(rng, text):
    b = bytearray(text.encode())
    for _ in range(rng.integers(1, 6)):
        op = rng.integers(4)
        pos = int(rng.integers(0, max(1, len(b))))
        if op == 0 and b:
            del b[pos]
        elif op == 1:
            b.insert(pos, int(rng.integers(0, 256)))
        elif op == 2 and b:
            b[pos] = int(rng.choice(list(b"{}[]\":,0123456789-.eE ntfaNI")))
        else:
            b[pos:pos] = rng.choice([b"1e999", b"NaN", b"[[[[", b"-", b"null", b"\"car\"", b"99999999999"])
    return bytes(b)


SEEDS = [
    json.dumps(LINE3D) + "\n" + json.dumps(LINE2D) + "\n",
    json.dumps({"frame": 0, "pose": np.eye(4).tolist()}) + "\n",
    json.dumps({"cameras": [{"id": "c", "K": [[500.0, 0, 320], [0, 500, 240], [0, 0, 1]], "image_size": [640, 480]}]}),
    (DATA / "kitti_calib_0000.txt").read_text(),
    json.dumps({"sequence": "0000", "frames": [{"frame": 0, "records": [
        {"track_id": 1, "class": "car", "box3d": {"xyz": [1, 2, 3], "hwl": [1.5, 1.6, 3.9], "yaw": 0.1},
         "score": 0.9, "confirmed": True, "box2d": {"camera": "cam2", "box": [1, 2, 30, 40]}, "mask": None}]}]}),
]


def test_parsers_never_crash_on_mutations(tmp_path):
    rng = np.random.default_rng(0)
    parsers = [parse_detections, parse_poses, load_rig, lambda p: load_rig(p, frame="velo"), read_json]
    p = tmp_path / "f"
    for k in range(2000):
        p.write_bytes(mutate(rng, SEEDS[k % len(SEEDS)]))
        for parse in parsers:
            try:
                parse(p)
            except DataError:
                pass


# -- rig consistency -----------------------------------------------------------------

def _rig_2d(tmp_path, boxes, camera="cam2"):
    rig_doc = {"cameras": [{"id": "cam2", "K": [[500.0, 0, 320], [0, 500, 240], [0, 0, 1]], "image_size": [640, 480]}]}
    rig = tmp_path / "rig.json"
    rig.write_text(json.dumps(rig_doc))
    docs = [{**LINE2D, "seq": "0000", "frame": 0, "camera": camera, "box": b} for b in boxes]
    return parse_detections(write_lines(tmp_path / "d.jsonl", docs)), load_rig(rig)


def test_fit_to_rig_clips_and_drops(tmp_path):
    dets, rig = _rig_2d(tmp_path, [[10, 20, 30, 80], [-5, 400, 700, 500], [650, 10, 700, 50]])
    assert fit_to_rig(dets, rig) == 2
    boxes = [d.box for d in dets["0000"][0].dets2d_by_camera["cam2"]]
    assert [b.as_array().tolist() for b in boxes] == [[10, 20, 30, 80], [0, 400, 640, 480]]
    assert fit_to_rig(dets, rig) == 0


def test_fit_to_rig_rejects_unknown_camera(tmp_path):
    dets, rig = _rig_2d(tmp_path, [[10, 20, 30, 80]], camera="cam9")
    with pytest.raises(DataError, match="cam9"):
        fit_to_rig(dets, rig)
