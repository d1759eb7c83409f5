"""Shared multi-resolution encoder producing per-level anchor embeddings.

One parameter set serves both domains. Raw features are projected to the
internal width by a linear layer plus ReLU, then each level applies a
residual gated temporal-conv block; levels above the first downsample by
stride-2 max pooling, halving the time axis per level. The block form (a
1-D conv producing value and gate halves, combined as x + value *
sigmoid(gate)) is a deliberately small stand-in for heavier pyramid blocks;
the rest of the method only relies on the multi-level embedding contract.

Padded positions are re-zeroed after every block so downstream levels and
heads see zeros, never bias leakage, at invalid steps. Validity masks pool
with logical OR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .layers import (
    Conv1d,
    Linear,
    Param,
    mask_zero_backward,
    mask_zero_forward,
    masked_max_pool2,
    masked_max_pool2_backward,
    relu_backward,
    relu_forward,
    sigmoid,
)


@dataclass
class PyramidConfig:
    levels: int = 6
    feature_dim: int = 64
    in_dim: int = 16
    kernel: int = 3

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise ValidationError(f"levels must be >= 1, got {self.levels}")
        if self.feature_dim < 1 or self.in_dim < 1:
            raise ValidationError("feature dims must be >= 1")

    def check_length(self, t: int) -> None:
        div = 2 ** (self.levels - 1)
        if t % div != 0:
            raise ValidationError(
                f"input length {t} not divisible by 2^(L-1) = {div} for L={self.levels}"
            )


@dataclass
class PyramidFeatures:
    """Per-level embeddings (B, T_l, F) and validity masks (B, T_l)."""

    levels: list[np.ndarray]
    masks: list[np.ndarray]
    caches: list | None = field(default=None, repr=False)


class GatedConvBlock:
    """Residual block: x + value * sigmoid(gate), both halves from one conv."""

    def __init__(self, name: str, dim: int, kernel: int, rng: np.random.Generator):
        self.conv = Conv1d(name + ".conv", dim, 2 * dim, kernel, rng)
        self.dim = dim
        self.params = list(self.conv.params)

    def forward(self, x: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, tuple]:
        h, conv_cache = self.conv.forward(x)
        value, gate = h[..., :self.dim], h[..., self.dim:]
        sg = sigmoid(gate)
        y = mask_zero_forward(x + value * sg, valid)
        return y, (conv_cache, value, sg, valid)

    def backward(self, cache: tuple, dy: np.ndarray) -> np.ndarray:
        conv_cache, value, sg, valid = cache
        dy = mask_zero_backward(valid, dy)
        dvalue = dy * sg
        dgate = dy * value * sg * (1.0 - sg)
        dx = self.conv.backward(conv_cache, np.concatenate([dvalue, dgate], axis=-1))
        return dx + dy


class FeaturePyramid:
    def __init__(self, cfg: PyramidConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.proj = Linear("pyramid.proj", cfg.in_dim, cfg.feature_dim, rng)
        self.blocks = [
            GatedConvBlock(f"pyramid.block{l}", cfg.feature_dim, cfg.kernel, rng)
            for l in range(cfg.levels)
        ]
        self.params: list[Param] = list(self.proj.params)
        for blk in self.blocks:
            self.params.extend(blk.params)

    def forward(self, x: np.ndarray, valid: np.ndarray) -> PyramidFeatures:
        """x: (B, T, F_in) float64; valid: (B, T) bool."""
        b, t, _ = x.shape
        self.cfg.check_length(t)
        flat, lin_cache = self.proj.forward(x.reshape(b * t, -1))
        act, relu_mask = relu_forward(flat)
        proj = mask_zero_forward(act.reshape(b, t, -1), valid)

        levels: list[np.ndarray] = []
        masks: list[np.ndarray] = []
        caches: list = [(lin_cache, relu_mask, valid, (b, t))]
        cur, cur_valid = proj, valid
        for l, blk in enumerate(self.blocks):
            if l > 0:
                cur, cur_valid, pool_cache = masked_max_pool2(cur, cur_valid)
            else:
                pool_cache = None
            cur, blk_cache = blk.forward(cur, cur_valid)
            levels.append(cur)
            masks.append(cur_valid)
            caches.append((pool_cache, blk_cache))
        return PyramidFeatures(levels=levels, masks=masks, caches=caches)

    def backward(self, feats: PyramidFeatures, dlevels: list[np.ndarray | None]) -> None:
        """Accumulate parameter grads from per-level output grads."""
        if feats.caches is None:
            raise ValidationError("forward was run without caches")
        pending: np.ndarray | None = None
        for l in range(self.cfg.levels - 1, -1, -1):
            pool_cache, blk_cache = feats.caches[l + 1]
            d = dlevels[l]
            if d is None:
                d = np.zeros_like(feats.levels[l])
            if pending is not None:
                d = d + pending
            d = self.blocks[l].backward(blk_cache, d)
            if pool_cache is not None:
                d = masked_max_pool2_backward(pool_cache, d)
            pending = d
        lin_cache, relu_mask, valid, (b, t) = feats.caches[0]
        dproj = mask_zero_backward(valid, pending)
        dflat = relu_backward(relu_mask, dproj.reshape(b * t, -1))
        self.proj.backward(lin_cache, dflat)
