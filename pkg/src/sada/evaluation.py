"""Temporal IoU, average precision, and multi-threshold mAP reports.

AP follows the standard detection protocol: predictions sorted by
descending score (ties broken by begin time, then input order) are greedily
matched to the unmatched ground-truth segment with the highest tIoU in the
same video; a match counts when that tIoU reaches the threshold. The
precision-recall curve is integrated with all-point interpolation. Classes
with no ground truth anywhere are excluded from mAP means instead of
scoring zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# (video_id, begin, end, score) and (video_id, begin, end)
PredTuple = tuple[str, float, float, float]
GtTuple = tuple[str, float, float]


@dataclass
class EvalConfig:
    tiou_thresholds: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)

    def __post_init__(self) -> None:
        ts = tuple(self.tiou_thresholds)
        if not ts:
            raise ValidationError("need at least one tIoU threshold")
        if any(not (0.0 < t <= 1.0) for t in ts):
            raise ValidationError(f"thresholds must lie in (0, 1], got {ts}")
        if list(ts) != sorted(ts):
            raise ValidationError(f"thresholds must be sorted, got {ts}")
        self.tiou_thresholds = ts


def tiou(a: tuple[float, float], b: tuple[float, float]) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def average_precision(preds: list[PredTuple], gts: list[GtTuple], tau: float) -> float:
    """All-point interpolated AP for one class at one tIoU threshold."""
    n_gt = len(gts)
    if n_gt == 0:
        return 0.0
    if not preds:
        return 0.0
    order = sorted(range(len(preds)), key=lambda k: (-preds[k][3], preds[k][1], k))
    gt_order = sorted(range(n_gt), key=lambda k: (gts[k][1], gts[k][2], k))
    by_video: dict[str, list[int]] = {}
    for j in gt_order:
        by_video.setdefault(gts[j][0], []).append(j)
    matched = [False] * n_gt
    tp = np.zeros(len(order))
    for rank, k in enumerate(order):
        video, begin, end, _ = preds[k]
        best_j, best_iou = -1, 0.0
        for j in by_video.get(video, ()):
            if matched[j]:
                continue
            v = tiou((begin, end), (gts[j][1], gts[j][2]))
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= tau:
            matched[best_j] = True
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.arange(1, len(order) + 1)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


@dataclass
class EvalReport:
    thresholds: tuple[float, ...]
    class_ids: list[int]
    ap: np.ndarray                 # (C, K), NaN rows for classes without GT
    map_per_threshold: np.ndarray  # (K,)
    avg_map: float

    def per_class_avg(self) -> np.ndarray:
        # absent classes have fully-NaN rows, so a plain mean keeps them NaN
        return self.ap.mean(axis=1) if self.ap.size else np.zeros(0)


def map_report(preds_by_video: dict[str, list], gts_by_video: dict[str, list],
               class_count: int, cfg: EvalConfig) -> EvalReport:
    """AP matrix pooled over videos; segments carry .class_id/.begin_s/.end_s."""
    ts = cfg.tiou_thresholds
    ap = np.full((class_count, len(ts)), np.nan)
    for c in range(1, class_count + 1):
        preds = [
            (vid, p.begin_s, p.end_s, p.score)
            for vid, ps in preds_by_video.items() for p in ps if p.class_id == c
        ]
        gts = [
            (vid, g.begin_s, g.end_s)
            for vid, gs in gts_by_video.items() for g in gs if g.class_id == c
        ]
        if not gts:
            continue
        for k, tau in enumerate(ts):
            ap[c - 1, k] = average_precision(preds, gts, tau)
    present = ~np.isnan(ap[:, 0])
    if present.any():
        map_per_t = ap[present].mean(axis=0)
        avg = float(map_per_t.mean())
    else:
        map_per_t = np.zeros(len(ts))
        avg = 0.0
    return EvalReport(thresholds=ts, class_ids=list(range(1, class_count + 1)),
                      ap=ap, map_per_threshold=map_per_t, avg_map=avg)


def report_to_csv(report: EvalReport) -> str:
    cols = ",".join(f"{t:.2f}" for t in report.thresholds)
    lines = [f"class,{cols},Avg"]
    per_avg = report.per_class_avg()
    for i, c in enumerate(report.class_ids):
        row = report.ap[i]
        if np.isnan(row[0]):
            cells = ",".join([""] * (len(report.thresholds) + 1))
            lines.append(f"{c},{cells}")
        else:
            cells = ",".join(f"{v:.6f}" for v in row)
            lines.append(f"{c},{cells},{per_avg[i]:.6f}")
    cells = ",".join(f"{v:.6f}" for v in report.map_per_threshold)
    lines.append(f"mAP,{cells},{report.avg_map:.6f}")
    return "\n".join(lines) + "\n"


def report_to_json(report: EvalReport) -> dict:
    per_avg = report.per_class_avg()
    classes = {}
    for i, c in enumerate(report.class_ids):
        if np.isnan(report.ap[i, 0]):
            classes[str(c)] = None
        else:
            classes[str(c)] = {
                "ap": [float(v) for v in report.ap[i]],
                "avg": float(per_avg[i]),
            }
    return {
        "thresholds": list(report.thresholds),
        "classes": classes,
        "map_per_threshold": [float(v) for v in report.map_per_threshold],
        "avg_map": report.avg_map,
    }


def write_report(report: EvalReport, csv_path, json_path) -> None:
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report_to_csv(report))
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report_to_json(report), fh, indent=2)
        fh.write("\n")
