import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_match
from sada.anchors import (
    build_grids,
    decode_offsets,
    encode_offsets,
    match,
    regression_ranges,
)
from sada.data import SegmentAnnotation
from sada.errors import ValidationError


def test_anchor_times_centered():
    grids = build_grids(8, 3, 0.5)
    np.testing.assert_allclose(grids[0].anchor_times, (np.arange(8) + 0.5) * 0.5)
    np.testing.assert_allclose(grids[1].anchor_times, (np.arange(4) + 0.5) * 1.0)
    np.testing.assert_allclose(grids[2].anchor_times, (np.arange(2) + 0.5) * 2.0)
    assert grids[2].stride_s == 2.0


def test_build_grids_requires_divisibility():
    with pytest.raises(ValidationError):
        build_grids(6, 3, 1.0)


def test_regression_ranges_double_per_level():
    ranges = regression_ranges(3, 1.0, base_strides=2.0)
    assert ranges[0] == (2.0, 4.0)
    assert ranges[1] == (4.0, 8.0)
    assert ranges[2][0] == 8.0 and np.isinf(ranges[2][1])


def test_encode_decode_roundtrip():
    seg = SegmentAnnotation(begin_s=3.0, end_s=11.0, class_id=2)
    d = encode_offsets(7.0, seg, 2.0)
    assert d == (2.0, 2.0)
    assert decode_offsets(7.0, d, 2.0) == (3.0, 11.0)


def test_encode_rejects_outside_anchor():
    seg = SegmentAnnotation(begin_s=3.0, end_s=11.0, class_id=2)
    with pytest.raises(ValidationError):
        encode_offsets(2.0, seg, 1.0)


def test_decode_rejects_negative():
    with pytest.raises(ValidationError):
        decode_offsets(5.0, (-0.1, 1.0), 1.0)


def test_shorter_segment_wins_contested_anchor():
    # Both segments cover anchor t=4.5 within window and range; the shorter
    # one claims it.
    grids = build_grids(16, 1, 1.0)
    ranges = [(0.0, np.inf)]
    long_seg = SegmentAnnotation(begin_s=1.0, end_s=8.0, class_id=1)
    short_seg = SegmentAnnotation(begin_s=3.0, end_s=6.0, class_id=2)
    lm = match(grids, [long_seg, short_seg], radius_strides=100.0, ranges=ranges)[0]
    assert lm.class_target[4] == 2


def test_begin_breaks_equal_length_tie():
    grids = build_grids(16, 1, 1.0)
    ranges = [(0.0, np.inf)]
    a = SegmentAnnotation(begin_s=2.0, end_s=6.0, class_id=1)
    b = SegmentAnnotation(begin_s=3.0, end_s=7.0, class_id=2)
    lm = match(grids, [b, a], radius_strides=100.0, ranges=ranges)[0]
    # anchor 3.5 and 4.5 and 5.5 lie in both; earlier begin (a) wins
    assert lm.class_target[3] == 1
    assert lm.class_target[4] == 1
    assert lm.class_target[5] == 1


def test_center_window_is_open():
    # Segment [0, 7]: center 3.5, radius 1.5 strides. Anchors 2.5 and 4.5
    # sit exactly 1.0 inside; anchors 1.5/5.5 are 2.0 away, outside. An
    # anchor exactly at center - radius (2.0 away for radius 2.0) must stay
    # negative because the window is open.
    grids = build_grids(8, 1, 1.0)
    seg = SegmentAnnotation(begin_s=0.0, end_s=7.0, class_id=1)
    lm = match(grids, [seg], radius_strides=2.0, ranges=[(0.0, np.inf)])[0]
    # center=3.5, open window (1.5, 5.5): anchors 2.5, 3.5, 4.5 qualify;
    # 1.5 and 5.5 are exactly on the boundary and must not.
    assert list(np.nonzero(lm.positive_mask)[0]) == [2, 3, 4]


def test_containment_is_closed():
    grids = build_grids(8, 1, 1.0)
    seg = SegmentAnnotation(begin_s=1.5, end_s=2.5, class_id=1)
    # anchors 1.5 and 2.5 are exactly at the segment endpoints
    lm = match(grids, [seg], radius_strides=10.0, ranges=[(0.0, np.inf)])[0]
    assert lm.positive_mask[1] and lm.positive_mask[2]


def test_range_is_half_open(rng):
    # max offset exactly at hi must fall to the next level
    grids = build_grids(8, 2, 1.0)
    ranges = [(0.0, 3.0), (3.0, np.inf)]
    seg = SegmentAnnotation(begin_s=0.5, end_s=6.5, class_id=1)
    lm = match(grids, [seg], radius_strides=100.0, ranges=ranges)
    # anchor at 3.5: offsets (3.0, 3.0) -> max 3.0, excluded from level 0
    assert not lm[0].positive_mask[3]
    assert lm[0].class_target[3] == 0


def _random_instance(rng):
    levels = int(rng.integers(1, 4))
    t = int(rng.integers(1, 9)) * (2 ** (levels - 1))
    stride = float(rng.choice([0.5, 1.0, 2.0]))
    grids = build_grids(t, levels, stride)
    ranges = regression_ranges(levels, stride)
    n_seg = int(rng.integers(0, 6))
    segments = []
    duration = t * stride
    for _ in range(n_seg):
        b = float(rng.uniform(0, duration * 0.9))
        e = float(b + rng.uniform(0.1, duration - b))
        segments.append(SegmentAnnotation(begin_s=b, end_s=e,
                                          class_id=int(rng.integers(1, 4))))
    return grids, segments, ranges


def test_match_agrees_with_bruteforce_oracle():
    rng = np.random.default_rng(1234)
    for _ in range(60):
        grids, segments, ranges = _random_instance(rng)
        got = match(grids, segments, 1.5, ranges)
        want = brute_force_match(grids, segments, 1.5, ranges)
        for lm, (cls, off, pos) in zip(got, want):
            np.testing.assert_array_equal(lm.class_target, cls)
            np.testing.assert_array_equal(lm.positive_mask, pos)
            np.testing.assert_allclose(lm.offset_target, off, atol=1e-12)


@given(st.integers(0, 2 ** 31 - 1))
def test_match_positive_entries_decode_into_segments(seed):
    rng = np.random.default_rng(seed)
    grids, segments, ranges = _random_instance(rng)
    for level, lm in enumerate(match(grids, segments, 1.5, ranges)):
        stride = grids[level].stride_s
        for a in np.nonzero(lm.positive_mask)[0]:
            t = grids[level].anchor_times[a]
            b, e = decode_offsets(t, tuple(lm.offset_target[a]), stride)
            # decoded boundaries must be one of the input segments
            hits = [s for s in segments
                    if abs(s.begin_s - b) < 1e-9 and abs(s.end_s - e) < 1e-9
                    and s.class_id == lm.class_target[a]]
            assert hits
        # negatives carry zero offsets
        np.testing.assert_array_equal(lm.offset_target[~lm.positive_mask], 0.0)
