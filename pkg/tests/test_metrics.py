import math

import numpy as np
import pytest

from mltpn.data import Annotation
from mltpn.detector import Detection
from mltpn.intervals import Interval, iou
from mltpn.metrics import (ACTIVITYNET_THRESHOLDS, THUMOS_THRESHOLDS, average_precision, map_suite,
                           parse_thresholds)
from mltpn.oracles import ap_oracle


def det(vid, s, e, score, cls=1):
    return Detection(vid, Interval(s, e), cls, score)


def test_ap_examples():
    gts = {"v": [Interval(0, 10), Interval(20, 30)]}
    perfect = [det("v", 0, 10, 0.9), det("v", 20, 30, 0.8)]
    for thr in (0.3, 0.5, 0.95):
        assert average_precision(perfect, gts, thr) == 1.0
    assert average_precision([], gts, 0.5) == 0.0
    dup = [det("v", 0, 10, 0.9), det("v", 0, 10, 0.8)]
    assert average_precision(dup, {"v": [Interval(0, 10)]}, 0.5) == 1.0
    assert math.isnan(average_precision(dup, {}, 0.5))


def test_ap_hand_curve():
    # FP first, then a TP: precision 1/2 at recall 1/2, second GT missed
    gts = {"v": [Interval(0, 10), Interval(40, 50)]}
    dets = [det("v", 20, 30, 0.9), det("v", 0, 10, 0.5)]
    assert average_precision(dets, gts, 0.5) == pytest.approx(0.25, abs=1e-15)


def test_ap_greedy_takes_highest_iou_gt():
    gts = {"v": [Interval(0, 10), Interval(2, 12)]}
    dets = [det("v", 2, 12, 0.9), det("v", 0, 10, 0.8)]
    assert average_precision(dets, gts, 0.7) == 1.0


def _random_instance(rng):
    vids = [f"v{i}" for i in range(int(rng.integers(1, 5)))]
    gts = {}
    for _ in range(int(rng.integers(1, 5))):
        v = str(rng.choice(vids))
        s = float(rng.integers(0, 20))
        gts.setdefault(v, []).append(Interval(s, s + float(rng.integers(2, 10))))
    dets = []
    for _ in range(int(rng.integers(0, 7))):
        s = float(rng.integers(0, 20))
        dets.append((str(rng.choice(vids)), Interval(s, s + float(rng.integers(2, 10))), float(rng.integers(1, 6)) / 5))
    return dets, gts


def test_ap_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        dets, gts = _random_instance(rng)
        thr = float(rng.choice([0.3, 0.5, 0.7]))
        got = average_precision([det(v, iv.start, iv.end, s) for v, iv, s in dets], gts, thr)
        assert got == pytest.approx(ap_oracle(dets, gts, thr), abs=1e-12)


def test_ap_properties():
    rng = np.random.default_rng(1)
    for _ in range(200):
        dets, gts = _random_instance(rng)
        d = [det(v, iv.start, iv.end, s) for v, iv, s in dets]
        aps = [average_precision(d, gts, t) for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert all(a >= b - 1e-15 for a, b in zip(aps, aps[1:]))
        assert all(0 <= a <= 1 for a in aps)
        squashed = [det(x.video_id, x.interval.start, x.interval.end, math.exp(3 * x.score) - 7) for x in d]
        assert average_precision(squashed, gts, 0.5) == aps[2]
        # a duplicate that can only ever reach one GT is a guaranteed FP
        if d and sum(iou(d[0].interval, g) >= 0.5 for g in gts.get(d[0].video_id, [])) <= 1:
            assert average_precision(d + [d[0]], gts, 0.5) <= aps[2] + 1e-15


def test_map_suite_perfect_and_excludes_empty_classes():
    anns = [Annotation("a", [(Interval(0, 10), 1), (Interval(20, 30), 2)]), Annotation("b", [(Interval(5, 9), 1)])]
    dets = [det("a", 0, 10, 0.9, 1), det("a", 20, 30, 0.8, 2), det("b", 5, 9, 0.7, 1), det("b", 0, 3, 0.9, 3)]
    report = map_suite(dets, anns, THUMOS_THRESHOLDS)
    assert report.classes == (1, 2)
    assert len(report.map) == 5 and all(v == 1.0 for v in report.map.values())
    assert report.average_map == 1.0


def test_map_is_unweighted_class_mean():
    anns = [Annotation("a", [(Interval(0, 10), 1), (Interval(20, 30), 2), (Interval(40, 50), 2)])]
    report = map_suite([det("a", 0, 10, 0.9, 1)], anns, (0.5,))
    assert report.ap[(1, 0.5)] == 1.0 and report.ap[(2, 0.5)] == 0.0
    assert report.map[0.5] == 0.5


def test_report_files(tmp_path):
    anns = [Annotation("a", [(Interval(0, 10), 1)])]
    report = map_suite([det("a", 0, 10, 0.9)], anns, (0.3, 0.5))
    txt, kv = report.write(tmp_path / "report")
    assert "average mAP: 1.000000" in txt.read_text()
    assert kv.read_text().splitlines() == ["ap.class1.iou0.30 = 1.000000", "ap.class1.iou0.50 = 1.000000",
                                           "map.iou0.30 = 1.000000", "map.iou0.50 = 1.000000",
                                           "map.average = 1.000000"]


def test_parse_thresholds():
    assert parse_thresholds("0.3:0.7:0.1") == (0.3, 0.4, 0.5, 0.6, 0.7) == THUMOS_THRESHOLDS
    assert parse_thresholds("0.5:0.95:0.05") == ACTIVITYNET_THRESHOLDS
    assert len(ACTIVITYNET_THRESHOLDS) == 10 and ACTIVITYNET_THRESHOLDS[-1] == 0.95
    assert parse_thresholds("0.5") == (0.5,)
    assert parse_thresholds("0.5,0.75") == (0.5, 0.75)
    for bad in ("0.7:0.3:0.1", "0:1", "0.5:0.9:0", "1.5", "a:b:c", ""):
        with pytest.raises(ValueError):
            parse_thresholds(bad)
