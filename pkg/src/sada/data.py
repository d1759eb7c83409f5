"""Feature/annotation I/O, padding, and cross-domain batch scheduling.

On-disk formats:

* Feature files: binary, magic ``SADF``, u32 version (currently 1), u32 T,
  u32 F, then T*F little-endian float32 values in row-major order.
* Annotations: JSON Lines, one video per line with keys ``video_id``,
  ``feature_path`` (relative to the annotation file), ``domain``
  (``"source"`` or ``"target"``), ``frame_stride_s``, and ``segments``
  (list of ``{"begin": s, "end": s, "class": id}`` with 1-based class ids;
  0 is reserved for background and never appears in annotations).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FormatError, ValidationError

FEATURE_MAGIC = b"SADF"
FEATURE_VERSION = 1
DOMAINS = ("source", "target")

_HEADER = struct.Struct("<4sIII")


@dataclass
class SegmentAnnotation:
    """One labeled action segment, in seconds, with a 1-based class id."""

    begin_s: float
    end_s: float
    class_id: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.begin_s) and math.isfinite(self.end_s)):
            raise ValidationError(f"non-finite segment bounds ({self.begin_s}, {self.end_s})")
        if self.begin_s < 0 or self.end_s <= self.begin_s:
            raise ValidationError(
                f"segment must satisfy 0 <= begin < end, got ({self.begin_s}, {self.end_s})"
            )
        if self.class_id < 1:
            raise ValidationError(f"class id must be >= 1, got {self.class_id}")

    @property
    def length_s(self) -> float:
        return self.end_s - self.begin_s


@dataclass
class FeatureSequence:
    """A (T, F) float32 feature matrix plus its temporal stride in seconds."""

    video_id: str
    features: np.ndarray
    frame_stride_s: float

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValidationError(f"features must be (T>=1, F>=1), got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValidationError(f"non-finite feature values in {self.video_id!r}")
        if not (self.frame_stride_s > 0 and math.isfinite(self.frame_stride_s)):
            raise ValidationError(f"frame_stride_s must be positive, got {self.frame_stride_s}")
        self.features = feats

    @property
    def num_steps(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_steps * self.frame_stride_s


@dataclass
class VideoRecord:
    """Features plus annotations for one video.

    Target-domain segments, when present, are held out: the trainer never
    reads them, only the evaluator does.
    """

    sequence: FeatureSequence
    segments: list[SegmentAnnotation]
    domain: str

    def __post_init__(self) -> None:
        if self.domain not in DOMAINS:
            raise ValidationError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        if self.domain == "source" and not self.segments:
            raise ValidationError(f"source video {self.video_id!r} has no segments")
        for seg in self.segments:
            if seg.end_s > self.sequence.duration_s + 1e-6:
                raise ValidationError(
                    f"segment end {seg.end_s} exceeds duration {self.sequence.duration_s}"
                    f" of {self.video_id!r}"
                )

    @property
    def video_id(self) -> str:
        return self.sequence.video_id


@dataclass
class Dataset:
    records: list[VideoRecord]
    class_count: int
    split: str = "train"

    def __post_init__(self) -> None:
        if self.class_count < 1:
            raise ValidationError(f"class_count must be >= 1, got {self.class_count}")
        if not self.records:
            raise ValidationError("dataset has no records")
        domains = {r.domain for r in self.records}
        if len(domains) != 1:
            raise ValidationError(f"dataset mixes domains {sorted(domains)}")
        seen: set[str] = set()
        for rec in self.records:
            if rec.video_id in seen:
                raise ValidationError(f"duplicate video_id {rec.video_id!r}")
            seen.add(rec.video_id)
            for seg in rec.segments:
                if seg.class_id > self.class_count:
                    raise ValidationError(
                        f"class id {seg.class_id} exceeds class_count {self.class_count}"
                    )

    @property
    def domain(self) -> str:
        return self.records[0].domain


def write_feature_file(path: str | Path, seq: FeatureSequence) -> None:
    feats = seq.features
    payload = np.ascontiguousarray(feats, dtype="<f4").tobytes()
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, feats.shape[0], feats.shape[1])
    Path(path).write_bytes(header + payload)


def read_feature_file(path: str | Path, video_id: str | None = None,
                      frame_stride_s: float = 1.0) -> FeatureSequence:
    """Parse a feature file, validating header and payload length exactly."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header ({len(raw)} bytes)")
    magic, version, t, f = _HEADER.unpack_from(raw, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if t < 1 or f < 1:
        raise FormatError(f"{path}: header declares empty matrix T={t} F={f}")
    expected = t * f * 4
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise FormatError(
            f"{path}: payload is {len(body)} bytes, header implies {expected}"
        )
    feats = np.frombuffer(body, dtype="<f4").reshape(t, f)
    if video_id is None:
        video_id = Path(path).stem
    return FeatureSequence(video_id=video_id, features=feats.copy(),
                           frame_stride_s=frame_stride_s)


def _parse_segment(obj: dict, line_no: int) -> SegmentAnnotation:
    try:
        return SegmentAnnotation(
            begin_s=float(obj["begin"]), end_s=float(obj["end"]), class_id=int(obj["class"])
        )
    except KeyError as exc:
        raise FormatError(f"annotation line {line_no}: segment missing key {exc}") from exc


def read_annotations(path: str | Path, class_count: int | None = None,
                     split: str = "train") -> Dataset:
    """Load a JSONL annotation file and the feature files it references.

    ``class_count`` is inferred as the maximum observed class id when omitted.
    """
    path = Path(path)
    base = path.parent
    records: list[VideoRecord] = []
    max_class = 0
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            for key in ("video_id", "feature_path", "domain", "frame_stride_s", "segments"):
                if key not in obj:
                    raise FormatError(f"{path}:{line_no}: missing key {key!r}")
            feat_path = base / obj["feature_path"]
            if not feat_path.is_file():
                raise ValidationError(f"{path}:{line_no}: feature file {feat_path} not found")
            seq = read_feature_file(feat_path, video_id=str(obj["video_id"]),
                                    frame_stride_s=float(obj["frame_stride_s"]))
            segs = [_parse_segment(s, line_no) for s in obj["segments"]]
            for seg in segs:
                max_class = max(max_class, seg.class_id)
            records.append(VideoRecord(sequence=seq, segments=segs, domain=str(obj["domain"])))
    if not records:
        raise ValidationError(f"{path}: no records")
    if class_count is None:
        if max_class == 0:
            raise ValidationError(f"{path}: cannot infer class_count, no segments present")
        class_count = max_class
    return Dataset(records=records, class_count=class_count, split=split)


def write_annotations(dataset: Dataset, out_dir: str | Path,
                      feature_subdir: str = "features") -> Path:
    """Write feature files plus annotations.jsonl under ``out_dir``.

    Returns the annotation file path.
    """
    out_dir = Path(out_dir)
    feat_dir = out_dir / feature_subdir
    feat_dir.mkdir(parents=True, exist_ok=True)
    ann_path = out_dir / "annotations.jsonl"
    with ann_path.open("w", encoding="utf-8") as fh:
        for rec in dataset.records:
            rel = f"{feature_subdir}/{rec.video_id}.sadf"
            write_feature_file(out_dir / rel, rec.sequence)
            obj = {
                "video_id": rec.video_id,
                "feature_path": rel,
                "domain": rec.domain,
                "frame_stride_s": rec.sequence.frame_stride_s,
                "segments": [
                    {"begin": s.begin_s, "end": s.end_s, "class": s.class_id}
                    for s in rec.segments
                ],
            }
            fh.write(json.dumps(obj) + "\n")
    return ann_path


@dataclass
class PaddedView:
    """One fixed-length window of a video: features, validity mask, origin."""

    features: np.ndarray      # (t_max, F) float32, zeros at padding
    valid_mask: np.ndarray    # (t_max,) bool
    start_index: int          # offset of the window in the source sequence
    record: VideoRecord
    segments: list[SegmentAnnotation] = field(default_factory=list)
    # segments re-expressed relative to the window start, clipped to it


def _window_segments(record: VideoRecord, start: int, t_max: int) -> list[SegmentAnnotation]:
    stride = record.sequence.frame_stride_s
    w_begin = start * stride
    w_end = (start + t_max) * stride
    out = []
    for seg in record.segments:
        nb = max(seg.begin_s, w_begin) - w_begin
        ne = min(seg.end_s, w_end) - w_begin
        if ne - nb > 1e-9:
            out.append(SegmentAnnotation(begin_s=nb, end_s=ne, class_id=seg.class_id))
    return out


def pad_or_crop(record: VideoRecord, t_max: int, training: bool,
                rng: np.random.Generator | None = None) -> PaddedView:
    """Fit one video into a t_max window.

    Shorter videos are zero-padded on the right with the mask cleared; longer
    ones get a uniformly random crop in training mode. Long videos outside
    training must go through :func:`eval_windows` instead.
    """
    seq = record.sequence
    t = seq.num_steps
    if t_max < 1:
        raise ValidationError(f"t_max must be >= 1, got {t_max}")
    if t > t_max:
        if not training:
            raise ValidationError(
                f"{record.video_id!r}: length {t} exceeds t_max {t_max}; use eval_windows"
            )
        if rng is None:
            raise ValidationError("training crop requires an rng")
        start = int(rng.integers(0, t - t_max + 1))
        feats = seq.features[start:start + t_max]
        mask = np.ones(t_max, dtype=bool)
    else:
        start = 0
        feats = np.zeros((t_max, seq.feature_dim), dtype=np.float32)
        feats[:t] = seq.features
        mask = np.zeros(t_max, dtype=bool)
        mask[:t] = True
    return PaddedView(features=np.ascontiguousarray(feats), valid_mask=mask,
                      start_index=start, record=record,
                      segments=_window_segments(record, start, t_max))


def eval_windows(record: VideoRecord, t_max: int) -> list[PaddedView]:
    """Non-overlapping t_max windows covering the whole video.

    The final window is zero-padded and masked. Windows carry their start
    index so predictions can be shifted back to video time.
    """
    seq = record.sequence
    t = seq.num_steps
    views = []
    for start in range(0, max(t, 1), t_max):
        feats = np.zeros((t_max, seq.feature_dim), dtype=np.float32)
        chunk = seq.features[start:start + t_max]
        feats[:chunk.shape[0]] = chunk
        mask = np.zeros(t_max, dtype=bool)
        mask[:chunk.shape[0]] = True
        views.append(PaddedView(features=feats, valid_mask=mask, start_index=start,
                                record=record,
                                segments=_window_segments(record, start, t_max)))
    return views


@dataclass
class PaddedBatch:
    """A stack of equally padded windows ready for the model."""

    features: np.ndarray     # (B, t_max, F) float64
    valid_mask: np.ndarray   # (B, t_max) bool
    views: list[PaddedView]

    @property
    def size(self) -> int:
        return self.features.shape[0]


def build_batch(views: list[PaddedView]) -> PaddedBatch:
    if not views:
        raise ValidationError("empty batch")
    dims = {v.features.shape for v in views}
    if len(dims) != 1:
        raise ValidationError(f"inconsistent window shapes in batch: {sorted(dims)}")
    feats = np.stack([v.features for v in views]).astype(np.float64)
    mask = np.stack([v.valid_mask for v in views])
    return PaddedBatch(features=feats, valid_mask=mask, views=views)


def interleave_domains(
    source: list[VideoRecord], target: list[VideoRecord], per_domain_batch: int,
    rng: np.random.Generator,
) -> Iterator[tuple[list[VideoRecord], list[VideoRecord]]]:
    """Yield per-iteration (source, target) video lists for one epoch.

    Each domain is shuffled once. The larger domain is consumed exactly once
    in slices of ``per_domain_batch`` (the final slice may be short); the
    smaller domain cycles its shuffled order until the larger one finishes,
    so every iteration sees both domains with equally many videos.
    """
    if per_domain_batch < 1:
        raise ValidationError(f"per_domain_batch must be >= 1, got {per_domain_batch}")
    if not source or not target:
        raise ValidationError("both domains must be non-empty")
    src_order = [source[i] for i in rng.permutation(len(source))]
    tgt_order = [target[i] for i in rng.permutation(len(target))]

    def cycled(seq: list[VideoRecord], start: int, n: int) -> list[VideoRecord]:
        return [seq[(start + k) % len(seq)] for k in range(n)]

    n_iter = math.ceil(max(len(source), len(target)) / per_domain_batch)
    src_pos = 0
    tgt_pos = 0
    for i in range(n_iter):
        if len(src_order) >= len(tgt_order):
            src_batch = src_order[i * per_domain_batch:(i + 1) * per_domain_batch]
            tgt_batch = cycled(tgt_order, tgt_pos, len(src_batch))
            tgt_pos += len(src_batch)
        else:
            tgt_batch = tgt_order[i * per_domain_batch:(i + 1) * per_domain_batch]
            src_batch = cycled(src_order, src_pos, len(tgt_batch))
            src_pos += len(tgt_batch)
        yield src_batch, tgt_batch
