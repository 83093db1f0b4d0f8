import numpy as np
import pytest
from hypothesis import given, strategies as st

from mltpn.data import FeatureSequence
from mltpn.detector import (HEADER, Detection, decode_predictions, format_detections, nms, parse_detections,
                            per_class_nms, read_detections, run_detector, write_detections)
from mltpn.intervals import Interval, iou
from mltpn.model import MLTPN
from mltpn.oracles import nms_oracle_ok
from mltpn.selfcheck import TINY_CONFIG

TINY = TINY_CONFIG


def det(s, e, score, anchor=-1, cls=1, vid="v"):
    return Detection(vid, Interval(s, e), cls, score, anchor)


def test_score_fusion_examples():
    anchors = np.array([[0.0, 8.0], [8.0, 16.0]])
    probs = np.array([[0.0, 1.0, 0.0], [0.2, 0.8, 0.0]])
    (a, b) = decode_predictions(probs, np.array([1.0, 0.5]), np.zeros((2, 2)), anchors, 16)
    assert (a.score, a.class_id, a.interval) == (1.0, 1, Interval(0, 8))
    assert b.score == pytest.approx(0.4, abs=1e-15)

    background = np.array([[0.995, 0.002, 0.003], [0.999, 0.0005, 0.0005]])
    assert decode_predictions(background, np.ones(2), np.zeros((2, 2)), anchors, 16) == []
    with pytest.raises(ValueError):
        decode_predictions(probs, np.ones(3), np.zeros((2, 2)), anchors, 16)


def test_decoded_intervals_are_clipped():
    anchors = np.array([[-4.0, 4.0], [12.0, 20.0]])
    out = decode_predictions(np.array([[0, 1.0], [0, 1.0]]), np.ones(2), np.zeros((2, 2)), anchors, 16)
    assert [d.interval for d in out] == [Interval(0, 4), Interval(12, 16)]


def test_nms_example():
    kept = nms([det(0, 10, 0.9), det(1, 11, 0.8), det(20, 30, 0.7)], 0.2)
    assert [(d.interval, d.score) for d in kept] == [(Interval(0, 10), 0.9), (Interval(20, 30), 0.7)]
    assert iou(Interval(0, 10), Interval(1, 11)) == pytest.approx(9 / 11)
    assert nms([det(3, 4, 0.5)]) == [det(3, 4, 0.5)]
    assert nms([]) == []


def test_nms_tie_break():
    a, b, c = det(5, 9, 0.5, anchor=3), det(4, 8, 0.5, anchor=7), det(4, 8, 0.5, anchor=2)
    assert nms([a, b, c], 0.2) == [c]


def _random_detections(rng, n):
    out = []
    for i in range(n):
        s = float(rng.integers(0, 40))
        out.append(det(s, s + float(rng.integers(1, 15)), float(rng.choice([0.2, 0.5, 0.7, 0.9])), anchor=i))
    return out


def test_nms_matches_exhaustive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        dets = _random_detections(rng, int(rng.integers(1, 9)))
        thr = float(rng.choice([0.2, 0.5, 0.7]))
        rank = {d: r for r, d in enumerate(sorted(dets, key=lambda d: (-d.score, d.interval.start, d.anchor_index)))}
        kept = nms(dets, thr)
        assert nms_oracle_ok([(d.interval, d.score, rank[d]) for d in dets],
                             [(d.interval, d.score, rank[d]) for d in kept], thr)


def test_per_class_nms_keeps_classes_and_videos_apart():
    dets = [det(0, 10, 0.9, cls=1), det(0, 10, 0.8, cls=2), det(0, 10, 0.7, cls=1, vid="w")]
    assert len(per_class_nms(dets)) == 3
    assert len(per_class_nms(dets + [det(0.5, 10, 0.6, cls=1)])) == 3
    assert len(per_class_nms([det(i, i + 1, 0.1 * i, anchor=i) for i in range(0, 10, 2)], top_k=2)) == 2


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_raising_score_floor_never_adds(f1, f2):
    rng = np.random.default_rng(1)
    probs = rng.dirichlet(np.ones(4), size=12)
    conf, loc = rng.uniform(0, 1, 12), rng.normal(0, 0.3, (12, 2))
    anchors = np.stack([np.arange(12.0), np.arange(12.0) + 4], axis=1)
    lo, hi = sorted((f1, f2))
    a = decode_predictions(probs, conf, loc, anchors, 16, score_floor=lo)
    b = decode_predictions(probs, conf, loc, anchors, 16, score_floor=hi)
    assert set(b) <= set(a)


def test_detection_file_round_trip(tmp_path):
    dets = [det(1.23456, 9.87654, 0.1234567, cls=2), det(0, 5, 0.9, vid="a"), det(3, 4, 0.95, vid="b")]
    text = format_detections(dets)
    lines = text.splitlines()
    assert lines[0] == HEADER
    assert lines[1:] == ["a\t0.000\t5.000\t1\t0.900000", "b\t3.000\t4.000\t1\t0.950000",
                         "v\t1.235\t9.877\t2\t0.123457"]
    path = tmp_path / "d.tsv"
    write_detections(path, dets)
    back = read_detections(path)
    assert [(d.video_id, d.interval.start, d.class_id) for d in back] == [("a", 0, 1), ("b", 3, 1), ("v", 1.235, 2)]
    assert format_detections([]) == HEADER + "\n"
    with pytest.raises(ValueError):
        parse_detections("a\t1\t2\t3\n")


def test_run_detector_merges_windows_into_video_time():
    model = MLTPN(TINY, seed=0)
    rng = np.random.default_rng(2)
    seq = FeatureSequence("long", rng.standard_normal((70, 4)))
    dets = run_detector(model, [seq], score_floor=0.0)
    assert dets and all(d.video_id == "long" for d in dets)
    assert all(0 <= d.interval.start < d.interval.end <= 70 for d in dets)
    assert max(d.interval.end for d in dets) > 32  # later windows are shifted
    for c in {d.class_id for d in dets}:
        kept = [d for d in dets if d.class_id == c]
        assert all(iou(a.interval, b.interval) < 0.2 for i, a in enumerate(kept) for b in kept[i + 1:])
    assert run_detector(model, [seq], score_floor=0.0) == dets
    assert run_detector(model, []) == []
