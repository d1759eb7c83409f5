"""Full detector assembly: pyramid, heads, conditioning, discriminators.

One Model instance owns every trainable parameter, organized into three
optimizer groups: "backbone" (pyramid plus both heads), "conditioning"
(class embedding rows when learnable), and "discriminators". The split
matters because disabled alignment losses must leave their groups
bit-identical, and the weight EMA used at inference covers everything
except the discriminators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import ClassConditioning, DomainDiscriminator
from .errors import ValidationError
from .heads import ConvHead
from .layers import Param
from .pyramid import FeaturePyramid, PyramidConfig


@dataclass
class ModelConfig:
    levels: int = 6
    feature_dim: int = 64
    in_dim: int = 16
    kernel: int = 3
    disc_width: int = 512
    disc_depth: int = 2
    conditioning: str = "learnable"

    def __post_init__(self) -> None:
        if self.disc_width < 1 or self.disc_depth < 1:
            raise ValidationError("discriminator width and depth must be >= 1")


class Model:
    def __init__(self, cfg: ModelConfig, class_count: int, seed: int):
        if class_count < 1:
            raise ValidationError(f"class_count must be >= 1, got {class_count}")
        self.cfg = cfg
        self.class_count = class_count
        rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        self.pyramid = FeaturePyramid(
            PyramidConfig(levels=cfg.levels, feature_dim=cfg.feature_dim,
                          in_dim=cfg.in_dim, kernel=cfg.kernel), rng)
        self.cls_head = ConvHead("heads.cls", cfg.feature_dim, class_count,
                                 cfg.kernel, rng)
        self.loc_head = ConvHead("heads.loc", cfg.feature_dim, 2, cfg.kernel, rng,
                                 softplus_output=True)
        self.conditioning = ClassConditioning(cfg.conditioning, class_count,
                                              cfg.feature_dim, rng)
        self.discriminators = [
            DomainDiscriminator(f"disc.l{l}", cfg.feature_dim, cfg.disc_width,
                                cfg.disc_depth, rng)
            for l in range(cfg.levels)
        ]

    def param_groups(self) -> dict[str, list[Param]]:
        return {
            "backbone": self.pyramid.params + self.cls_head.params + self.loc_head.params,
            "conditioning": self.conditioning.params,
            "discriminators": [p for d in self.discriminators for p in d.params],
        }

    def all_params(self) -> list[Param]:
        return [p for ps in self.param_groups().values() for p in ps]

    def ema_params(self) -> list[Param]:
        """Everything the inference-time weight average tracks."""
        groups = self.param_groups()
        return groups["backbone"] + groups["conditioning"]

    def zero_grad(self) -> None:
        for p in self.all_params():
            p.zero_grad()

    def values(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.all_params()}

    def set_values(self, values: dict[str, np.ndarray]) -> None:
        for p in self.all_params():
            if p.name in values:
                v = np.asarray(values[p.name], dtype=np.float64)
                if v.shape != p.value.shape:
                    raise ValidationError(
                        f"shape mismatch for {p.name}: {v.shape} vs {p.value.shape}"
                    )
                p.value = v.copy()


def build_model(cfg: ModelConfig, class_count: int, seed: int) -> Model:
    return Model(cfg, class_count, seed)
