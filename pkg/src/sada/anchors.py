"""Anchor grids, center-sampling assignment, and offset encode/decode.

An anchor at level l, index t sits at time (t + 0.5) * stride_l seconds with
stride_l = 2^l * frame_stride_s. A segment claims an anchor when the anchor
time falls strictly inside the open window (center - r * stride_l,
center + r * stride_l), lies inside [begin, end], and the segment's maximum
offset from the anchor fits the level's regression range. Competing segments
are resolved to the shortest one (then earlier begin, then annotation
order). Everything else is background, class 0.

Regression range for level l covers max offsets in [2^l * s_base,
2^(l+1) * s_base) seconds with s_base = 2 * frame_stride_s; the last level
is unbounded above. Offsets are stride-normalized so regression targets
share a scale across levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SegmentAnnotation
from .errors import ValidationError

CENTER_RADIUS_STRIDES = 1.5
BASE_RANGE_STRIDES = 2.0


@dataclass
class AnchorGrid:
    level: int
    stride_s: float
    anchor_times: np.ndarray  # (T_l,) seconds, strictly increasing


@dataclass
class LevelMatch:
    class_target: np.ndarray    # (T_l,) int, 0 = background
    offset_target: np.ndarray   # (T_l, 2) stride-normalized, zero at negatives
    positive_mask: np.ndarray   # (T_l,) bool


def build_grids(t: int, levels: int, frame_stride_s: float) -> list[AnchorGrid]:
    if t < 1 or levels < 1:
        raise ValidationError(f"bad grid size T={t}, L={levels}")
    if t % (2 ** (levels - 1)) != 0:
        raise ValidationError(f"T={t} not divisible by 2^(L-1) for L={levels}")
    grids = []
    for level in range(levels):
        stride = (2 ** level) * frame_stride_s
        t_l = t // (2 ** level)
        times = (np.arange(t_l) + 0.5) * stride
        grids.append(AnchorGrid(level=level, stride_s=stride, anchor_times=times))
    return grids


def regression_ranges(levels: int, frame_stride_s: float,
                      base_strides: float = BASE_RANGE_STRIDES) -> list[tuple[float, float]]:
    """Per-level [lo, hi) bounds on a segment's max offset, in seconds."""
    s_base = base_strides * frame_stride_s
    out = []
    for level in range(levels):
        lo = (2 ** level) * s_base
        hi = (2 ** (level + 1)) * s_base if level < levels - 1 else np.inf
        out.append((lo, hi))
    return out


def encode_offsets(anchor_time: float, segment: SegmentAnnotation,
                   stride_s: float) -> tuple[float, float]:
    if not (segment.begin_s <= anchor_time <= segment.end_s):
        raise ValidationError(
            f"anchor {anchor_time} outside segment ({segment.begin_s}, {segment.end_s})"
        )
    return (anchor_time - segment.begin_s) / stride_s, (segment.end_s - anchor_time) / stride_s


def decode_offsets(anchor_time: float, offsets: tuple[float, float],
                   stride_s: float) -> tuple[float, float]:
    d_b, d_e = offsets
    if d_b < 0 or d_e < 0:
        raise ValidationError(f"offsets must be nonnegative, got ({d_b}, {d_e})")
    return anchor_time - d_b * stride_s, anchor_time + d_e * stride_s


def match(grids: list[AnchorGrid], segments: list[SegmentAnnotation],
          radius_strides: float = CENTER_RADIUS_STRIDES,
          ranges: list[tuple[float, float]] | None = None) -> list[LevelMatch]:
    """Assign every anchor a class and, if positive, regression offsets."""
    if ranges is None:
        ranges = regression_ranges(len(grids), grids[0].stride_s)
    if len(ranges) != len(grids):
        raise ValidationError(f"{len(ranges)} ranges for {len(grids)} levels")

    # Claim order: shortest segment first, then earlier begin, then input order.
    order = sorted(range(len(segments)),
                   key=lambda k: (segments[k].length_s, segments[k].begin_s, k))
    out = []
    for grid, (lo, hi) in zip(grids, ranges):
        times = grid.anchor_times
        cls = np.zeros(times.shape[0], dtype=np.int64)
        offs = np.zeros((times.shape[0], 2))
        taken = np.zeros(times.shape[0], dtype=bool)
        for k in order:
            seg = segments[k]
            center = 0.5 * (seg.begin_s + seg.end_s)
            r = radius_strides * grid.stride_s
            in_window = (times > center - r) & (times < center + r)
            in_segment = (times >= seg.begin_s) & (times <= seg.end_s)
            max_off = np.maximum(times - seg.begin_s, seg.end_s - times)
            in_range = (max_off >= lo) & (max_off < hi)
            eligible = in_window & in_segment & in_range & ~taken
            if eligible.any():
                idx = np.nonzero(eligible)[0]
                cls[idx] = seg.class_id
                offs[idx, 0] = (times[idx] - seg.begin_s) / grid.stride_s
                offs[idx, 1] = (seg.end_s - times[idx]) / grid.stride_s
                taken[idx] = True
        out.append(LevelMatch(class_target=cls, offset_target=offs, positive_mask=taken))
    return out
