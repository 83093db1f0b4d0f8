import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mltpn.data import (Annotation, DataFormatError, FeatureSequence, InfeasibleSpecError, SyntheticSpec,
                        check_window_config, clip_instances, dump_features, format_annotations,
                        generate_synthetic, parse_annotations, parse_features, read_dataset, window,
                        window_starts, write_dataset)
from mltpn.intervals import Interval


def test_synthetic_is_deterministic_and_valid():
    spec = SyntheticSpec(num_videos=5, length=128, max_duration=24, seed=3)
    a_seq, a_ann = generate_synthetic(spec)
    b_seq, b_ann = generate_synthetic(spec)
    assert [dump_features(s) for s in a_seq] == [dump_features(s) for s in b_seq]
    assert format_annotations(a_ann) == format_annotations(b_ann)
    assert [s.video_id for s in a_seq] == [f"video_{i}" for i in range(5)]
    for seq, ann in zip(a_seq, a_ann):
        assert seq.features.shape == (128, 16)
        ann.validate(seq.length, spec.num_classes)
        ivs = sorted(iv for iv, _ in ann.instances)
        assert 1 <= len(ivs) <= 4
        assert all(spec.min_duration <= iv.length <= spec.max_duration for iv in ivs)
        assert all(b.start - a.end >= 2 for a, b in zip(ivs, ivs[1:]))
    other = generate_synthetic(SyntheticSpec(num_videos=5, length=128, max_duration=24, seed=4))[0]
    assert not np.array_equal(other[0].features, a_seq[0].features)


def test_zero_noise_is_zero_outside_instances():
    spec = SyntheticSpec(num_videos=3, length=64, min_instances=1, max_instances=1, noise_sigma=0.0)
    for seq, ann in zip(*generate_synthetic(spec)):
        ((iv, c),) = ann.instances
        mask = np.ones(64, dtype=bool)
        mask[int(iv.start):int(iv.end)] = False
        assert (seq.features[mask] == 0).all()
        assert (np.abs(seq.features[~mask]).sum(axis=1) > 0).all()


def test_synthetic_edge_cases():
    assert generate_synthetic(SyntheticSpec(num_videos=0)) == ([], [])
    with pytest.raises(InfeasibleSpecError):
        generate_synthetic(SyntheticSpec(length=64, max_instances=4, max_duration=20))
    with pytest.raises(InfeasibleSpecError):
        SyntheticSpec(min_duration=1).validate()


def test_window_examples():
    assert window_starts(128, 128, 64) == [0]
    assert window_starts(200, 128, 64) == [0, 64, 72]
    assert window_starts(50, 128, 64) == [0]
    seq = FeatureSequence("v", np.arange(200 * 2, dtype=float).reshape(200, 2))
    ann = Annotation("v", [(Interval(60, 70), 1)])
    wins = window(seq, ann, 128, 64)
    assert [w.offset for w in wins] == [0, 64, 72]
    assert wins[0].instances == [(Interval(60, 70), 1)]
    np.testing.assert_array_equal(wins[2].features, seq.features[72:200])
    short = window(FeatureSequence("s", np.ones((50, 2))), None, 128, 64)
    assert short[0].valid_length == 50 and (short[0].features[50:] == 0).all()


def test_clip_rule_keeps_three_quarters():
    inst = [(Interval(100, 140), 2)]
    assert clip_instances(inst, 0, 130) == [(Interval(100, 130), 2)]  # 30/40 survives
    assert clip_instances(inst, 0, 129) == []
    assert clip_instances(inst, 110, 238) == [(Interval(0, 30), 2)]


@settings(max_examples=60)
@given(st.integers(1, 600), st.integers(8, 160), st.integers(1, 160))
def test_windows_cover_every_snippet(length, win, stride):
    if stride > win:
        with pytest.raises(ValueError):
            window_starts(length, win, stride)
        return
    starts = window_starts(length, win, stride)
    covered = np.zeros(length, dtype=bool)
    for s in starts:
        covered[s:s + win] = True
    assert covered.all()
    assert starts == sorted(set(starts)) and starts[-1] == max(length - win, 0)


@settings(max_examples=40)
@given(st.integers(128, 500), st.integers(0, 460), st.integers(2, 48))
def test_instance_inside_survives_some_window(length, start, dur):
    check_window_config(128, 64, 48)
    if start + dur > length:
        return
    seq = FeatureSequence("v", np.zeros((length, 1)))
    ann = Annotation("v", [(Interval(start, start + dur), 1)])
    found = [w for w in window(seq, ann, 128, 64) for iv, _ in w.instances if iv.length == dur]
    assert found


def test_check_window_config():
    with pytest.raises(ValueError):
        check_window_config(128, 100, 48)


def test_feature_round_trip_and_truncation():
    rng = np.random.default_rng(0)
    seq = FeatureSequence("clip-7", rng.standard_normal((13, 5)).astype(np.float32))
    buf = dump_features(seq)
    assert buf[:5] == b"MLFT1"
    back = parse_features(buf)
    assert back.video_id == "clip-7"
    np.testing.assert_array_equal(back.features, seq.features)
    with pytest.raises(DataFormatError, match="byte offset 23"):
        parse_features(buf[:30])
    with pytest.raises(DataFormatError, match="magic"):
        parse_features(b"XXXXX" + buf[5:])
    with pytest.raises(DataFormatError, match="trailing"):
        parse_features(buf + b"\0")


def test_feature_validation():
    with pytest.raises(DataFormatError):
        FeatureSequence("v", np.array([[1.0, np.nan]]))
    with pytest.raises(DataFormatError):
        FeatureSequence("v", np.zeros((0, 3)))


def test_annotation_round_trip():
    anns = [Annotation("a", [(Interval(0.5, 10.25), 1), (Interval(20, 31), 3)]), Annotation("empty", [])]
    text = format_annotations(anns)
    assert parse_annotations(text) == anns
    assert parse_annotations("# just a comment\n") == []
    assert parse_annotations("v\t1\t5\t2\n") == [Annotation("v", [(Interval(1, 5), 2)])]
    with pytest.raises(DataFormatError, match="line 1"):
        parse_annotations("v\t1\t5\n")
    with pytest.raises(DataFormatError, match="line 2"):
        parse_annotations("# c\nv\t5\t1\t2\n")


def test_annotation_validation():
    with pytest.raises(DataFormatError):
        Annotation("v", [(Interval(0, 10), 4)]).validate(20, 3)
    with pytest.raises(DataFormatError):
        Annotation("v", [(Interval(15, 25), 1)]).validate(20, 3)


def test_dataset_round_trip(tmp_path):
    seqs, anns = generate_synthetic(SyntheticSpec(num_videos=3, length=64, max_duration=12, seed=1))
    write_dataset(tmp_path, seqs, anns)
    assert len(list((tmp_path / "features").iterdir())) == 3
    back_seqs, back_anns = read_dataset(tmp_path)
    assert back_anns == anns
    for a, b in zip(seqs, back_seqs):
        np.testing.assert_array_equal(a.features, b.features)
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "nope")
