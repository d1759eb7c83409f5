"""Decoding model outputs into scored segments, SoftNMS, background masking.

Long videos are processed as non-overlapping windows; decoded segments are
shifted back to video time before class-agnostic Gaussian SoftNMS merges
everything per video. Inference runs on the EMA weight copy exclusively.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .anchors import build_grids, regression_ranges
from .anchors import match as match_anchors
from .data import VideoRecord, build_batch, eval_windows
from .errors import ValidationError
from .layers import sigmoid
from .model import Model

MASK_PHASES = ("inference", "training")


@dataclass
class NmsConfig:
    sigma: float = 0.4
    iou_threshold: float = 0.1
    min_score: float = 0.001
    max_per_video: int = 200
    pre_nms_threshold: float = 0.01
    pre_nms_topk: int = 200

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")
        for name in ("iou_threshold", "min_score", "pre_nms_threshold"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        if self.max_per_video < 1 or self.pre_nms_topk < 1:
            raise ValidationError("max_per_video and pre_nms_topk must be >= 1")


@dataclass
class ScoredSegment:
    begin_s: float
    end_s: float
    class_id: int
    score: float
    level: int = 0
    anchor_index: int = 0

    def __post_init__(self) -> None:
        if self.end_s <= self.begin_s:
            raise ValidationError(f"degenerate segment ({self.begin_s}, {self.end_s})")
        if self.score <= 0:
            raise ValidationError(f"score must be positive, got {self.score}")
        if self.class_id < 1:
            raise ValidationError(f"class_id must be >= 1, got {self.class_id}")


def _tiou(b0: float, e0: float, b1: float, e1: float) -> float:
    inter = max(0.0, min(e0, e1) - max(b0, b1))
    union = (e0 - b0) + (e1 - b1) - inter
    return inter / union if union > 0 else 0.0


def soft_nms(preds: list[ScoredSegment], cfg: NmsConfig) -> list[ScoredSegment]:
    """Gaussian score-decay suppression, class-agnostic.

    Repeatedly take the highest-scoring remaining prediction (ties resolve
    to input order); every remaining prediction overlapping it beyond
    iou_threshold has its score multiplied by exp(-tIoU^2 / sigma).
    Survivors below min_score are dropped at the end and at most
    max_per_video are kept. Coordinates never change.
    """
    if not preds:
        return []
    n = len(preds)
    begins = np.array([p.begin_s for p in preds])
    ends = np.array([p.end_s for p in preds])
    scores = np.array([p.score for p in preds], dtype=np.float64)
    active = np.ones(n, dtype=bool)
    picked: list[tuple[int, float]] = []
    for _ in range(n):
        masked = np.where(active, scores, -np.inf)
        k = int(np.argmax(masked))
        picked.append((k, float(scores[k])))
        active[k] = False
        if not active.any():
            break
        inter = np.minimum(ends, ends[k]) - np.maximum(begins, begins[k])
        inter = np.maximum(inter, 0.0)
        union = (ends - begins) + (ends[k] - begins[k]) - inter
        iou = np.where(union > 0, inter / union, 0.0)
        decay = np.where(iou > cfg.iou_threshold, np.exp(-(iou * iou) / cfg.sigma), 1.0)
        scores[active] *= decay[active]
    kept = [(i, s) for i, s in picked if s >= cfg.min_score][:cfg.max_per_video]
    return [replace(preds[i], score=s) for i, s in kept]


def mask_background(match_classes: np.ndarray, fraction: float, phase: str,
                    seed: int, level: int = 0, window_start: int = 0) -> np.ndarray:
    """Keep-mask dropping a seeded fraction of GT-background anchors.

    ``match_classes`` holds the ground-truth match class per anchor (0 =
    background). Exactly round(fraction * n_background) anchors are dropped,
    chosen by a generator keyed on (seed, level, window_start) so selections
    replay identically. Inference drops them before decoding; training
    excludes them from every loss.
    """
    if not (0.0 <= fraction <= 1.0):
        raise ValidationError(f"fraction must be in [0, 1], got {fraction}")
    if phase not in MASK_PHASES:
        raise ValidationError(f"phase must be one of {MASK_PHASES}")
    keep = np.ones(match_classes.shape[0], dtype=bool)
    bkg = np.nonzero(match_classes == 0)[0]
    count = int(round(fraction * bkg.size))
    if count > 0:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 13, level, window_start]))
        drop = rng.choice(bkg, size=count, replace=False)
        keep[drop] = False
    return keep


def predict_record(model: Model, record: VideoRecord, t_max: int,
                   nms_cfg: NmsConfig, center_radius: float = 1.5,
                   base_range_strides: float = 2.0,
                   mask_fraction: float = 0.0,
                   mask_seed: int = 0) -> list[ScoredSegment]:
    """Decode one video into SoftNMS-filtered scored segments."""
    stride = record.sequence.frame_stride_s
    levels = model.cfg.levels
    grids = build_grids(t_max, levels, stride)
    ranges = regression_ranges(levels, stride, base_range_strides)
    duration = record.sequence.duration_s
    raw: list[ScoredSegment] = []
    for view in eval_windows(record, t_max):
        batch = build_batch([view])
        feats = model.pyramid.forward(batch.features, batch.valid_mask)
        window_offset = view.start_index * stride
        matches = None
        if mask_fraction > 0.0:
            matches = match_anchors(grids, view.segments, center_radius, ranges)
        for l in range(levels):
            z, valid = feats.levels[l], feats.masks[l][0].copy()
            logits, _ = model.cls_head.forward(z, feats.masks[l])
            offsets, _ = model.loc_head.forward(z, feats.masks[l])
            probs = sigmoid(logits[0])
            if matches is not None:
                valid &= mask_background(matches[l].class_target, mask_fraction,
                                         "inference", mask_seed, level=l,
                                         window_start=view.start_index)
            cand = valid[:, None] & (probs > nms_cfg.pre_nms_threshold)
            t_idx, c_idx = np.nonzero(cand)
            if t_idx.size == 0:
                continue
            times = grids[l].anchor_times[t_idx]
            d_b = offsets[0, t_idx, 0]
            d_e = offsets[0, t_idx, 1]
            begin = times - d_b * grids[l].stride_s + window_offset
            end = times + d_e * grids[l].stride_s + window_offset
            begin = np.clip(begin, 0.0, duration)
            end = np.clip(end, 0.0, duration)
            scores = probs[t_idx, c_idx]
            ok = end - begin > 1e-9
            order = np.argsort(-scores[ok], kind="stable")[:nms_cfg.pre_nms_topk]
            tt, cc = t_idx[ok][order], c_idx[ok][order]
            bb, ee, ss = begin[ok][order], end[ok][order], scores[ok][order]
            for j in range(order.size):
                raw.append(ScoredSegment(
                    begin_s=float(bb[j]), end_s=float(ee[j]),
                    class_id=int(cc[j]) + 1, score=float(ss[j]),
                    level=l, anchor_index=int(tt[j])))
    return soft_nms(raw, nms_cfg)


def predict_dataset(model: Model, records: list[VideoRecord], t_max: int,
                    nms_cfg: NmsConfig, center_radius: float = 1.5,
                    base_range_strides: float = 2.0, mask_fraction: float = 0.0,
                    mask_seed: int = 0) -> dict[str, list[ScoredSegment]]:
    return {
        rec.video_id: predict_record(model, rec, t_max, nms_cfg, center_radius,
                                     base_range_strides, mask_fraction, mask_seed)
        for rec in records
    }


def write_predictions(path, preds_by_video: dict[str, list[ScoredSegment]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for video_id in sorted(preds_by_video):
            for p in preds_by_video[video_id]:
                fh.write(json.dumps({
                    "video_id": video_id, "begin": p.begin_s, "end": p.end_s,
                    "class": p.class_id, "score": p.score,
                }) + "\n")


def read_predictions(path) -> dict[str, list[ScoredSegment]]:
    out: dict[str, list[ScoredSegment]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.setdefault(obj["video_id"], []).append(ScoredSegment(
                begin_s=float(obj["begin"]), end_s=float(obj["end"]),
                class_id=int(obj["class"]), score=float(obj["score"])))
    return out
