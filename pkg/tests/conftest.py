import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sada.config import DataConfig, RunConfig, TrainConfig
from sada.data import Dataset, FeatureSequence, SegmentAnnotation, VideoRecord
from sada.model import ModelConfig

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def make_tiny_cfg(**train_overrides) -> RunConfig:
    """A 3-level model on 16-step windows; fast enough for unit tests."""
    train = dict(
        epochs=2, lr=1e-3, warmup_epochs=1, per_domain_batch=2,
        seed=1, early_stop_patience=0, eval_map_every=0,
    )
    train.update(train_overrides)
    return RunConfig(
        model=ModelConfig(levels=3, feature_dim=8, in_dim=8, kernel=3,
                          disc_width=16, disc_depth=1),
        data=DataConfig(t_max=16),
        train=TrainConfig(**train),
    ).validate()


def make_video(rng: np.random.Generator, video_id: str, domain: str,
               t: int = 16, f: int = 8, stride: float = 1.0,
               segments=None) -> VideoRecord:
    """Segments may be SegmentAnnotation or (begin, end, class) tuples."""
    feats = rng.standard_normal((t, f)).astype(np.float32)
    if segments is None:
        # scales to (2, 9) at t=16 and stays inside shorter videos
        segments = [(t / 8.0 * stride, 9.0 * t / 16.0 * stride, 1)]
    segments = [
        s if isinstance(s, SegmentAnnotation)
        else SegmentAnnotation(begin_s=float(s[0]), end_s=float(s[1]),
                               class_id=int(s[2]))
        for s in segments
    ]
    seq = FeatureSequence(video_id=video_id, features=feats, frame_stride_s=stride)
    return VideoRecord(sequence=seq, segments=segments, domain=domain)


def make_dataset(rng: np.random.Generator, domain: str, n: int = 4,
                 class_count: int = 3, t: int = 16, f: int = 8) -> Dataset:
    records = []
    for i in range(n):
        c = (i % class_count) + 1
        segs = [SegmentAnnotation(begin_s=2.0, end_s=9.0, class_id=c)]
        records.append(make_video(rng, f"{domain[0]}{i}", domain, t=t, f=f,
                                  segments=segs))
    return Dataset(records=records, class_count=class_count, split="train")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)
