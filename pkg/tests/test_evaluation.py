import numpy as np
import pytest

from oracles import ap_reference
from sada.errors import ValidationError
from sada.evaluation import (
    EvalConfig,
    average_precision,
    map_report,
    report_to_csv,
    report_to_json,
    tiou,
)
from sada.inference import ScoredSegment


def test_tiou_basic():
    assert tiou((0, 2), (1, 3)) == pytest.approx(1 / 3)
    assert tiou((0, 1), (2, 3)) == 0.0
    assert tiou((0, 2), (0, 2)) == 1.0


def test_eval_config_validates():
    with pytest.raises(ValidationError):
        EvalConfig(tiou_thresholds=(0.5, 0.1))
    with pytest.raises(ValidationError):
        EvalConfig(tiou_thresholds=(0.0, 0.5))
    with pytest.raises(ValidationError):
        EvalConfig(tiou_thresholds=())


def test_ap_perfect_single_prediction():
    preds = [("v", 0.0, 2.0, 0.9)]
    gts = [("v", 0.0, 2.0)]
    assert average_precision(preds, gts, 0.5) == 1.0


def test_ap_no_gt_is_zero():
    assert average_precision([("v", 0, 1, 0.5)], [], 0.5) == 0.0


def test_ap_no_predictions_is_zero():
    assert average_precision([], [("v", 0, 1)], 0.5) == 0.0


def test_ap_duplicate_predictions_second_is_fp():
    preds = [("v", 0.0, 2.0, 0.9), ("v", 0.0, 2.0, 0.8)]
    gts = [("v", 0.0, 2.0)]
    # one TP at rank 1 (prec 1, rec 1), duplicate is FP
    assert average_precision(preds, gts, 0.5) == 1.0


def test_ap_interpolation_hand_case():
    # ranks: TP, FP, TP -> prec 1, 1/2, 2/3; rec 1/2, 1/2, 1
    preds = [("v", 0.0, 2.0, 0.9), ("v", 10.0, 12.0, 0.8), ("v", 4.0, 6.0, 0.7)]
    gts = [("v", 0.0, 2.0), ("v", 4.0, 6.0)]
    want = 0.5 * 1.0 + 0.5 * (2 / 3)
    assert average_precision(preds, gts, 0.5) == pytest.approx(want)


def _random_ap_instance(rng):
    videos = ["a", "b"]
    n_pred = int(rng.integers(0, 9))
    n_gt = int(rng.integers(0, 4))
    preds = []
    for _ in range(n_pred):
        b = float(rng.uniform(0, 8))
        preds.append((str(rng.choice(videos)), b, b + float(rng.uniform(0.2, 4)),
                      float(rng.uniform(0, 1))))
    gts = []
    for _ in range(n_gt):
        b = float(rng.uniform(0, 8))
        gts.append((str(rng.choice(videos)), b, b + float(rng.uniform(0.2, 4))))
    return preds, gts


def test_ap_agrees_with_reference():
    rng = np.random.default_rng(99)
    for _ in range(120):
        preds, gts = _random_ap_instance(rng)
        tau = float(rng.choice([0.1, 0.3, 0.5, 0.7]))
        got = average_precision(preds, gts, tau)
        want = ap_reference(preds, gts, tau)
        assert got == pytest.approx(want, abs=1e-9)


def test_ap_score_tie_uses_earlier_begin():
    # same score: the earlier-begin prediction ranks first and takes the GT
    preds = [("v", 4.0, 6.0, 0.5), ("v", 0.0, 2.0, 0.5)]
    gts = [("v", 0.0, 2.0)]
    got = average_precision(preds, gts, 0.5)
    # ranked: (0,2) first (TP), then (4,6) FP -> AP = 1.0
    assert got == 1.0


def _seg(b, e, c, s):
    return ScoredSegment(begin_s=b, end_s=e, class_id=c, score=s)


def _gt(b, e, c):
    from sada.data import SegmentAnnotation
    return SegmentAnnotation(begin_s=b, end_s=e, class_id=c)


def test_map_report_shapes_and_nan_exclusion():
    preds = {"v1": [_seg(0, 2, 1, 0.9), _seg(4, 6, 2, 0.8)]}
    gts = {"v1": [_gt(0, 2, 1)]}
    cfg = EvalConfig(tiou_thresholds=(0.1, 0.5))
    rep = map_report(preds, gts, class_count=3, cfg=cfg)
    assert rep.ap.shape == (3, 2)
    assert rep.ap[0, 0] == 1.0           # class 1 has GT and a perfect pred
    assert np.isnan(rep.ap[1, 0])         # class 2 has no GT -> excluded
    assert np.isnan(rep.ap[2, 0])
    assert rep.map_per_threshold[0] == 1.0
    assert rep.avg_map == 1.0


def test_map_report_all_classes_absent_yields_zero_map():
    cfg = EvalConfig(tiou_thresholds=(0.5,))
    rep = map_report({"v": []}, {"v": []}, class_count=2, cfg=cfg)
    assert np.isnan(rep.ap).all()
    assert rep.avg_map == 0.0


def test_report_csv_layout():
    preds = {"v1": [_seg(0, 2, 1, 0.9)]}
    gts = {"v1": [_gt(0, 2, 1)]}
    cfg = EvalConfig(tiou_thresholds=(0.1, 0.5))
    rep = map_report(preds, gts, class_count=2, cfg=cfg)
    lines = report_to_csv(rep).strip().splitlines()
    assert lines[0] == "class,0.10,0.50,Avg"
    assert lines[1].startswith("1,")
    assert lines[2].startswith("2,,")     # absent class: blank cells
    assert lines[-1].startswith("mAP,")
    j = report_to_json(rep)
    assert j["classes"]["2"] is None
    assert j["avg_map"] == rep.avg_map
