import math

import numpy as np
import pytest

from oracles import softnms_reference
from sada.errors import ValidationError
from sada.inference import (
    NmsConfig,
    ScoredSegment,
    mask_background,
    read_predictions,
    soft_nms,
    write_predictions,
)


def _seg(b, e, s, c=1):
    return ScoredSegment(begin_s=b, end_s=e, class_id=c, score=s)


def test_softnms_worked_example():
    # two fully overlapping unit segments: second decays by exp(-1/sigma)
    cfg = NmsConfig(sigma=0.4, iou_threshold=0.1, min_score=0.0,
                    max_per_video=10, pre_nms_threshold=0.0)
    out = soft_nms([_seg(0, 1, 0.9), _seg(0, 1, 0.8)], cfg)
    assert out[0].score == pytest.approx(0.9)
    assert out[1].score == pytest.approx(0.8 * math.exp(-1.0 / 0.4), abs=1e-12)
    # hand-checked decay constant: tIoU=0.8 at sigma=0.4 gives exp(-1.6)
    assert 0.8 * math.exp(-(0.8 ** 2) / 0.4) == pytest.approx(0.1615, abs=1e-4)


def test_softnms_below_gate_untouched():
    cfg = NmsConfig(sigma=0.4, iou_threshold=0.5, min_score=0.0,
                    max_per_video=10, pre_nms_threshold=0.0)
    # tIoU = 1/3 < 0.5 -> no decay
    out = soft_nms([_seg(0, 2, 0.9), _seg(1, 3, 0.8)], cfg)
    assert out[1].score == pytest.approx(0.8)


def test_softnms_drops_below_min_score_and_caps():
    cfg = NmsConfig(sigma=0.01, iou_threshold=0.1, min_score=0.5,
                    max_per_video=1, pre_nms_threshold=0.0)
    out = soft_nms([_seg(0, 1, 0.9), _seg(0, 1, 0.8), _seg(0, 1, 0.7)], cfg)
    # heavy decay pushes the others below 0.5; cap keeps only the best anyway
    assert len(out) == 1
    assert out[0].score == pytest.approx(0.9)


def test_softnms_coordinates_never_change():
    cfg = NmsConfig(sigma=0.4, iou_threshold=0.1, min_score=0.0,
                    max_per_video=10, pre_nms_threshold=0.0)
    out = soft_nms([_seg(0.0, 2.5, 0.9), _seg(0.5, 2.0, 0.8)], cfg)
    assert (out[1].begin_s, out[1].end_s) == (0.5, 2.0)


def test_softnms_tie_prefers_input_order():
    cfg = NmsConfig(sigma=0.4, iou_threshold=0.9, min_score=0.0,
                    max_per_video=10, pre_nms_threshold=0.0)
    out = soft_nms([_seg(4, 5, 0.8, c=2), _seg(0, 1, 0.8, c=1)], cfg)
    assert out[0].class_id == 2 and out[1].class_id == 1


def test_softnms_class_agnostic_decay():
    cfg = NmsConfig(sigma=0.4, iou_threshold=0.1, min_score=0.0,
                    max_per_video=10, pre_nms_threshold=0.0)
    out = soft_nms([_seg(0, 1, 0.9, c=1), _seg(0, 1, 0.8, c=2)], cfg)
    # different classes still decay each other
    assert out[1].score < 0.8


def test_softnms_agrees_with_reference():
    rng = np.random.default_rng(321)
    cfg = NmsConfig(sigma=0.4, iou_threshold=0.1, min_score=0.001,
                    max_per_video=200, pre_nms_threshold=0.0)
    for _ in range(80):
        n = int(rng.integers(0, 11))
        items = []
        for _ in range(n):
            b = float(rng.uniform(0, 6))
            items.append((b, b + float(rng.uniform(0.2, 3)), float(rng.uniform(0, 1))))
        preds = [_seg(b, e, s) for b, e, s in items]
        got = soft_nms(preds, cfg)
        want = softnms_reference(items, cfg.sigma, cfg.iou_threshold,
                                 cfg.min_score, cfg.max_per_video)
        assert len(got) == len(want)
        for g, (wi, ws) in zip(got, want):
            assert g.begin_s == preds[wi].begin_s
            assert g.score == pytest.approx(ws, abs=1e-9)


def test_mask_background_counts_and_determinism():
    classes = np.array([0, 1, 0, 0, 2, 0, 0, 0])   # 6 background anchors
    keep1 = mask_background(classes, 0.5, "inference", seed=9, level=1, window_start=4)
    keep2 = mask_background(classes, 0.5, "inference", seed=9, level=1, window_start=4)
    np.testing.assert_array_equal(keep1, keep2)
    assert (~keep1).sum() == 3                      # round(0.5 * 6)
    assert keep1[classes != 0].all()                # positives never dropped


def test_mask_background_fraction_bounds_and_extremes():
    classes = np.array([0, 0, 1])
    with pytest.raises(ValidationError):
        mask_background(classes, 1.5, "inference", seed=0)
    with pytest.raises(ValidationError):
        mask_background(classes, 0.5, "nonsense", seed=0)
    all_kept = mask_background(classes, 0.0, "training", seed=0)
    assert all_kept.all()
    none_bkg = mask_background(classes, 1.0, "training", seed=0)
    assert not none_bkg[0] and not none_bkg[1] and none_bkg[2]


def test_mask_background_seed_sensitivity():
    classes = np.zeros(50, dtype=np.int64)
    a = mask_background(classes, 0.5, "inference", seed=1, level=0, window_start=0)
    b = mask_background(classes, 0.5, "inference", seed=1, level=1, window_start=0)
    assert (a != b).any()


def test_predictions_roundtrip(tmp_path):
    preds = {
        "v2": [_seg(0.0, 1.5, 0.9, c=2)],
        "v1": [_seg(2.0, 3.0, 0.7, c=1), _seg(4.0, 5.0, 0.6, c=3)],
    }
    path = tmp_path / "preds.jsonl"
    write_predictions(path, preds)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 3
    # sorted by video id
    assert '"video_id": "v1"' in lines[0]
    back = read_predictions(path)
    assert set(back) == {"v1", "v2"}
    assert back["v1"][0].begin_s == 2.0
    assert back["v2"][0].score == pytest.approx(0.9)


def test_scored_segment_validation():
    with pytest.raises(ValidationError):
        ScoredSegment(begin_s=2.0, end_s=1.0, class_id=1, score=0.5)
    with pytest.raises(ValidationError):
        ScoredSegment(begin_s=0.0, end_s=1.0, class_id=0, score=0.5)


def test_nms_config_validation():
    with pytest.raises(ValidationError):
        NmsConfig(sigma=0.0)
    with pytest.raises(ValidationError):
        NmsConfig(max_per_video=0)
