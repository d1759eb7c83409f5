import json

import numpy as np
import pytest

from sada.errors import FormatError, ValidationError
from sada.synthbench import (
    BenchSpec,
    ShiftSpec,
    class_prototypes,
    generate_benchmark,
    read_benchmark_dir,
    shift_map,
    summarize,
    write_benchmark_dir,
)

SMALL = BenchSpec(class_count=3, videos_per_domain=4, num_steps=48,
                  feature_dim=8, segments_min=1, segments_max=2,
                  min_segment_len=4, max_segment_len=10, min_gap=2)


def test_generation_deterministic():
    a_src, a_tgt = generate_benchmark(SMALL, ShiftSpec(seed=5))
    b_src, b_tgt = generate_benchmark(SMALL, ShiftSpec(seed=5))
    for a, b in ((a_src, b_src), (a_tgt, b_tgt)):
        for ra, rb in zip(a.records, b.records):
            assert ra.video_id == rb.video_id
            np.testing.assert_array_equal(ra.sequence.features, rb.sequence.features)
    c_src, _ = generate_benchmark(SMALL, ShiftSpec(seed=6))
    assert not np.array_equal(a_src.records[0].sequence.features,
                              c_src.records[0].sequence.features)


def test_paired_content_shares_ground_truth():
    src, tgt = generate_benchmark(SMALL, ShiftSpec(seed=3))
    assert len(src.records) == len(tgt.records) == 4
    for rs, rt in zip(src.records, tgt.records):
        assert rs.video_id[:-1] == rt.video_id[:-1]
        assert rs.video_id.endswith("s") and rt.video_id.endswith("t")
        assert [(s.begin_s, s.end_s, s.class_id) for s in rs.segments] == \
               [(s.begin_s, s.end_s, s.class_id) for s in rt.segments]


def test_zero_shift_differs_only_by_noise():
    shift = ShiftSpec(rotation_angle_rad=0.0, offset_scale=0.0,
                      noise_sigma=0.0, seed=4)
    src, tgt = generate_benchmark(SMALL, shift)
    for rs, rt in zip(src.records, tgt.records):
        np.testing.assert_allclose(rs.sequence.features, rt.sequence.features,
                                   atol=1e-6)


def test_rotation_is_orthogonal_and_norm_preserving():
    for angle in (0.3, 1.1, 2.0):
        rot, u = shift_map(ShiftSpec(rotation_angle_rad=angle, seed=9), 8)
        np.testing.assert_allclose(rot @ rot.T, np.eye(8), atol=1e-10)
        assert np.linalg.det(rot) == pytest.approx(1.0)
        np.testing.assert_allclose(np.linalg.norm(u), 1.0)
    # identity at angle zero
    rot0, _ = shift_map(ShiftSpec(rotation_angle_rad=0.0, seed=9), 8)
    np.testing.assert_allclose(rot0, np.eye(8), atol=1e-12)


def test_shift_magnitude_moves_features():
    clean_shift = ShiftSpec(noise_sigma=0.0, seed=2)
    src, _ = generate_benchmark(SMALL, clean_shift)
    big = ShiftSpec(rotation_angle_rad=1.2, offset_scale=1.5,
                    noise_sigma=0.0, seed=2)
    _, tgt_big = generate_benchmark(SMALL, big)
    gap = np.linalg.norm(
        src.records[0].sequence.features - tgt_big.records[0].sequence.features,
        axis=1).mean()
    assert gap > 1.0


def test_prototypes_are_unit_and_shift_seeded():
    p = class_prototypes(3, 8, seed=7)
    assert p.shape == (3, 8)
    np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0)
    np.testing.assert_array_equal(p, class_prototypes(3, 8, seed=7))
    assert not np.array_equal(p, class_prototypes(3, 8, seed=8))


def test_placement_constraints():
    spec = BenchSpec(class_count=2, videos_per_domain=12, num_steps=64,
                     feature_dim=4, segments_min=2, segments_max=3,
                     min_segment_len=5, max_segment_len=12, min_gap=3)
    src, _ = generate_benchmark(spec, ShiftSpec(seed=11))
    for rec in src.records:
        segs = sorted(rec.segments, key=lambda s: s.begin_s)
        assert 2 <= len(segs) <= 3
        for s in segs:
            assert 5 <= s.length_s <= 12
            assert s.begin_s >= 0 and s.end_s <= 64
        for a, b in zip(segs, segs[1:]):
            assert b.begin_s - a.end_s >= 3


def test_bench_spec_validation():
    with pytest.raises(ValidationError):
        BenchSpec(segments_min=3, segments_max=2)
    with pytest.raises(ValidationError):
        BenchSpec(num_steps=8, segments_min=3, min_segment_len=4, min_gap=2)
    with pytest.raises(ValidationError):
        ShiftSpec(offset_scale=-1.0)


def test_summarize_counts():
    src, _ = generate_benchmark(SMALL, ShiftSpec(seed=5))
    s = summarize(src)
    assert s["video_count"] == 4
    assert s["total_segments"] == sum(s["per_class_segments"].values())
    want_total = sum(len(r.segments) for r in src.records)
    assert s["total_segments"] == want_total


def test_benchmark_dir_roundtrip(tmp_path):
    out = tmp_path / "bench"
    written = write_benchmark_dir(SMALL, ShiftSpec(seed=5), out,
                                  val_videos_per_domain=2)
    assert set(written) == {"source_train", "target_train",
                            "source_val", "target_val"}
    assert len(written["source_val"].records) == 2
    back = read_benchmark_dir(out)
    for name in written:
        assert [r.video_id for r in back[name].records] == \
               [r.video_id for r in written[name].records]
        np.testing.assert_array_equal(
            back[name].records[0].sequence.features,
            written[name].records[0].sequence.features)
        assert back[name].class_count == 3
    # val split uses fresh content under the same shift
    assert written["source_val"].records[0].video_id.startswith("w")
    assert back["source_val"].split == "val"
    assert back["source_train"].split == "train"


def test_benchmark_dir_validation(tmp_path):
    with pytest.raises(ValidationError):
        read_benchmark_dir(tmp_path)
    out = tmp_path / "bench"
    write_benchmark_dir(SMALL, ShiftSpec(seed=5), out, val_videos_per_domain=2)
    meta = json.loads((out / "bench.json").read_text())
    meta["version"] = 99
    (out / "bench.json").write_text(json.dumps(meta))
    with pytest.raises(FormatError):
        read_benchmark_dir(out)
    meta["version"] = 1
    del meta["splits"]["target_val"]
    (out / "bench.json").write_text(json.dumps(meta))
    with pytest.raises(ValidationError):
        read_benchmark_dir(out)
