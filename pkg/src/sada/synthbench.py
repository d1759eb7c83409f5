"""Synthetic paired source/target benchmark with a controllable domain shift.

Each class gets a fixed random unit prototype in feature space. A video is
background noise except inside segments, where the class prototype enters
scaled by a raised-cosine envelope (soft boundaries keep localization
learnable). Source and target share per-video clean content; the target view
applies a seeded rotation plus a constant offset direction before adding its
own noise, so the shift magnitude is an interpretable knob:

    source = x_clean + noise
    target = R(angle) @ x_clean + offset_scale * u + noise

R rotates a seeded random 2-plane (identity when F < 2), u is a seeded
random unit vector, and noise is i.i.d. Gaussian with shared sigma.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    FeatureSequence,
    SegmentAnnotation,
    VideoRecord,
    read_annotations,
    write_annotations,
)
from .errors import FormatError, ValidationError

_PLACEMENT_RETRIES = 100


@dataclass
class ShiftSpec:
    """Domain-shift knobs applied to target-view features."""

    rotation_angle_rad: float = 0.0
    offset_scale: float = 0.0
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.offset_scale < 0:
            raise ValidationError(f"offset_scale must be >= 0, got {self.offset_scale}")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass
class BenchSpec:
    """Size and placement parameters for one generated split."""

    class_count: int = 3
    videos_per_domain: int = 20
    num_steps: int = 128
    feature_dim: int = 16
    segments_min: int = 2
    segments_max: int = 4
    min_segment_len: int = 4
    max_segment_len: int = 24
    min_gap: int = 2
    frame_stride_s: float = 1.0

    def __post_init__(self) -> None:
        if self.class_count < 1:
            raise ValidationError(f"class_count must be >= 1, got {self.class_count}")
        if self.videos_per_domain < 1:
            raise ValidationError("videos_per_domain must be >= 1")
        if not (1 <= self.segments_min <= self.segments_max):
            raise ValidationError(
                f"bad segment count range [{self.segments_min}, {self.segments_max}]"
            )
        if not (1 <= self.min_segment_len <= self.max_segment_len):
            raise ValidationError(
                f"bad segment length range [{self.min_segment_len}, {self.max_segment_len}]"
            )
        if self.min_gap < 0:
            raise ValidationError("min_gap must be >= 0")
        # Cheapest possible layout must fit, otherwise every draw would fail.
        worst = self.segments_min * self.min_segment_len + (self.segments_min - 1) * self.min_gap
        if worst > self.num_steps:
            raise ValidationError(
                f"{self.segments_min} segments of length {self.min_segment_len} with gap "
                f"{self.min_gap} cannot fit in {self.num_steps} steps"
            )


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValidationError("degenerate zero vector during generation")
    return v / n


def class_prototypes(class_count: int, feature_dim: int, seed: int) -> np.ndarray:
    """(C, F) fixed unit prototypes shared by every split of a benchmark."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    protos = rng.standard_normal((class_count, feature_dim))
    return np.stack([_unit(p) for p in protos])


def shift_map(shift: ShiftSpec, feature_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrix R (F, F) and offset direction u (F,) for a shift."""
    rng = np.random.default_rng(np.random.SeedSequence([shift.seed, 2]))
    f = feature_dim
    if f >= 2:
        q1 = _unit(rng.standard_normal(f))
        q2 = rng.standard_normal(f)
        q2 = _unit(q2 - np.dot(q2, q1) * q1)
        c, s = math.cos(shift.rotation_angle_rad), math.sin(shift.rotation_angle_rad)
        rot = (
            np.eye(f)
            + (c - 1.0) * (np.outer(q1, q1) + np.outer(q2, q2))
            + s * (np.outer(q2, q1) - np.outer(q1, q2))
        )
    else:
        rot = np.eye(f)
        rng.standard_normal(f)  # keep the stream position stable across F
        rng.standard_normal(f)
    u = _unit(rng.standard_normal(f))
    return rot, u


def _place_segments(bench: BenchSpec, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """Non-overlapping (begin, end, class) placements in timestep units."""
    for _ in range(_PLACEMENT_RETRIES):
        n = int(rng.integers(bench.segments_min, bench.segments_max + 1))
        lengths = rng.integers(bench.min_segment_len, bench.max_segment_len + 1, size=n)
        slack = bench.num_steps - int(lengths.sum()) - (n - 1) * bench.min_gap
        if slack < 0:
            continue
        # Distribute the slack over n+1 gaps uniformly at random.
        cuts = np.sort(rng.integers(0, slack + 1, size=n))
        gaps = np.diff(np.concatenate(([0], cuts, [slack])))
        classes = rng.integers(1, bench.class_count + 1, size=n)
        out = []
        cursor = 0
        for k in range(n):
            cursor += int(gaps[k])
            begin = cursor
            cursor += int(lengths[k])
            out.append((begin, cursor, int(classes[k])))
            cursor += bench.min_gap
        return out
    raise ValidationError(
        "could not place segments after "
        f"{_PLACEMENT_RETRIES} attempts; relax min_gap or lengths"
    )


def _clean_video(bench: BenchSpec, protos: np.ndarray,
                 rng: np.random.Generator) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    placements = _place_segments(bench, rng)
    x = np.zeros((bench.num_steps, bench.feature_dim))
    for begin, end, cls in placements:
        length = end - begin
        k = np.arange(length)
        envelope = 0.5 * (1.0 - np.cos(2.0 * np.pi * (k + 0.5) / length))
        x[begin:end] += envelope[:, None] * protos[cls - 1][None, :]
    return x, placements


def generate_benchmark(bench: BenchSpec, shift: ShiftSpec,
                       split_key: int = 0, split: str = "train",
                       id_prefix: str = "v") -> tuple[Dataset, Dataset]:
    """Generate one paired (source, target) split.

    Prototypes and the shift map depend only on ``shift.seed`` so different
    splits of the same benchmark share them; placements and noise depend on
    ``split_key`` as well. Target records keep their ground truth, which the
    trainer must ignore.
    """
    protos = class_prototypes(bench.class_count, bench.feature_dim, shift.seed)
    rot, u = shift_map(shift, bench.feature_dim)
    offset = shift.offset_scale * u

    src_records: list[VideoRecord] = []
    tgt_records: list[VideoRecord] = []
    root = np.random.SeedSequence([shift.seed, 3, split_key])
    content_seeds, src_noise_seeds, tgt_noise_seeds = (
        s.spawn(bench.videos_per_domain) for s in root.spawn(3)
    )
    for v in range(bench.videos_per_domain):
        content_rng = np.random.default_rng(content_seeds[v])
        clean, placements = _clean_video(bench, protos, content_rng)
        segments = [
            SegmentAnnotation(begin_s=b * bench.frame_stride_s,
                              end_s=e * bench.frame_stride_s, class_id=c)
            for b, e, c in placements
        ]
        sigma = shift.noise_sigma
        src_noise = np.random.default_rng(src_noise_seeds[v]).standard_normal(clean.shape)
        tgt_noise = np.random.default_rng(tgt_noise_seeds[v]).standard_normal(clean.shape)
        src_feats = clean + sigma * src_noise
        tgt_feats = clean @ rot.T + offset[None, :] + sigma * tgt_noise
        ident = f"{id_prefix}{v:04d}"
        src_records.append(VideoRecord(
            sequence=FeatureSequence(video_id=ident + "s", features=src_feats,
                                     frame_stride_s=bench.frame_stride_s),
            segments=list(segments), domain="source"))
        tgt_records.append(VideoRecord(
            sequence=FeatureSequence(video_id=ident + "t", features=tgt_feats,
                                     frame_stride_s=bench.frame_stride_s),
            segments=list(segments), domain="target"))
    source = Dataset(records=src_records, class_count=bench.class_count, split=split)
    target = Dataset(records=tgt_records, class_count=bench.class_count, split=split)
    return source, target


def summarize(dataset: Dataset) -> dict:
    """Per-class segment counts and mean lengths plus overall totals."""
    counts = {c: 0 for c in range(1, dataset.class_count + 1)}
    length_sums = {c: 0.0 for c in range(1, dataset.class_count + 1)}
    total = 0
    total_len = 0.0
    for rec in dataset.records:
        for seg in rec.segments:
            counts[seg.class_id] += 1
            length_sums[seg.class_id] += seg.length_s
            total += 1
            total_len += seg.length_s
    mean_len = {
        c: (length_sums[c] / counts[c] if counts[c] else 0.0) for c in counts
    }
    return {
        "video_count": len(dataset.records),
        "total_segments": total,
        "mean_segment_len_s": (total_len / total) if total else 0.0,
        "per_class_segments": counts,
        "per_class_mean_len_s": mean_len,
    }


BENCH_FORMAT = "sada-bench"
BENCH_VERSION = 1
SPLIT_NAMES = ("source_train", "target_train", "source_val", "target_val")


def write_benchmark_dir(bench: BenchSpec, shift: ShiftSpec, out_dir,
                        val_videos_per_domain: int | None = None) -> dict[str, Dataset]:
    """Generate and write all four splits plus the bench.json sidecar.

    Train uses split_key 0, val uses split_key 1 with its own video count
    (default: a quarter of the train count, at least 2).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if val_videos_per_domain is None:
        val_videos_per_domain = max(2, bench.videos_per_domain // 4)
    val_bench = dataclasses.replace(bench, videos_per_domain=val_videos_per_domain)

    src_tr, tgt_tr = generate_benchmark(bench, shift, split_key=0, split="train",
                                        id_prefix="v")
    src_va, tgt_va = generate_benchmark(val_bench, shift, split_key=1, split="val",
                                        id_prefix="w")
    datasets = {
        "source_train": src_tr, "target_train": tgt_tr,
        "source_val": src_va, "target_val": tgt_va,
    }
    splits = {}
    for name, ds in datasets.items():
        ann = write_annotations(ds, out / name)
        splits[name] = str(ann.relative_to(out))
    meta = {
        "format": BENCH_FORMAT,
        "version": BENCH_VERSION,
        "class_count": bench.class_count,
        "bench": dataclasses.asdict(bench),
        "val_videos_per_domain": val_videos_per_domain,
        "shift": dataclasses.asdict(shift),
        "splits": splits,
    }
    (out / "bench.json").write_text(json.dumps(meta, indent=2) + "\n",
                                    encoding="utf-8")
    return datasets


def read_benchmark_dir(data_dir) -> dict[str, Dataset]:
    """Load the four splits a benchmark directory declares in bench.json."""
    root = Path(data_dir)
    meta_path = root / "bench.json"
    if not meta_path.is_file():
        raise ValidationError(f"{root}: no bench.json; not a benchmark directory")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format") != BENCH_FORMAT:
        raise FormatError(f"{meta_path}: unrecognized format {meta.get('format')!r}")
    if meta.get("version") != BENCH_VERSION:
        raise FormatError(f"{meta_path}: unsupported version {meta.get('version')!r}")
    class_count = int(meta["class_count"])
    out = {}
    for name, rel in meta["splits"].items():
        split = "val" if name.endswith("val") else "train"
        out[name] = read_annotations(root / rel, class_count=class_count, split=split)
    missing = [n for n in SPLIT_NAMES if n not in out]
    if missing:
        raise ValidationError(f"{root}: benchmark missing splits {missing}")
    return out
