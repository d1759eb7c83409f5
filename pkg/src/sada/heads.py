"""Shared classification/localization heads and the supervised task losses.

Both heads are three same-padded 1-D convolutions (kernel 3) applied to
every pyramid level with one parameter set. The classification head emits C
multi-label logits per anchor (background is the all-zero target row, there
is no background logit); the localization head emits two stride-normalized
offsets squashed through softplus so they stay nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .layers import (
    Conv1d,
    Param,
    mask_zero_backward,
    mask_zero_forward,
    relu_backward,
    relu_forward,
    sigmoid,
    softplus,
)

FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25


@dataclass
class TaskLossWeights:
    cls_weight: float = 1.0
    loc_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.cls_weight < 0 or self.loc_weight < 0:
            raise ValidationError("task loss weights must be nonnegative")


class ConvHead:
    """Three-layer 1-D conv stack shared across pyramid levels."""

    def __init__(self, name: str, feature_dim: int, out_dim: int, kernel: int,
                 rng: np.random.Generator, softplus_output: bool = False):
        self.convs = [
            Conv1d(f"{name}.conv0", feature_dim, feature_dim, kernel, rng),
            Conv1d(f"{name}.conv1", feature_dim, feature_dim, kernel, rng),
            Conv1d(f"{name}.conv2", feature_dim, out_dim, kernel, rng),
        ]
        self.softplus_output = softplus_output
        self.params: list[Param] = [p for c in self.convs for p in c.params]

    def forward(self, z: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, tuple]:
        caches = []
        h = z
        for i, conv in enumerate(self.convs):
            h, conv_cache = conv.forward(h)
            if i < len(self.convs) - 1:
                h, relu_mask = relu_forward(h)
            else:
                relu_mask = None
            # re-zero padding so masked steps never leak bias into neighbors
            h = mask_zero_forward(h, valid)
            caches.append((conv_cache, relu_mask))
        if self.softplus_output:
            raw = h
            h = mask_zero_forward(softplus(h), valid)
            caches.append(raw)
        return h, (caches, valid)

    def backward(self, cache: tuple, dy: np.ndarray) -> np.ndarray:
        caches, valid = cache
        if self.softplus_output:
            raw = caches[-1]
            dy = mask_zero_backward(valid, dy) * sigmoid(raw)
            caches = caches[:-1]
        for conv, (conv_cache, relu_mask) in zip(reversed(self.convs), reversed(caches)):
            dy = mask_zero_backward(valid, dy)
            if relu_mask is not None:
                dy = relu_backward(relu_mask, dy)
            dy = conv.backward(conv_cache, dy)
        return dy


def _one_hot_rows(class_target: np.ndarray, class_count: int) -> np.ndarray:
    """Targets in [0, C] to multi-label rows; 0 maps to the all-zero row."""
    flat = class_target.reshape(-1)
    rows = np.zeros((flat.shape[0], class_count))
    pos = flat > 0
    rows[np.nonzero(pos)[0], flat[pos] - 1] = 1.0
    return rows.reshape(*class_target.shape, class_count)


def focal_loss(logits: np.ndarray, class_target: np.ndarray,
               valid_mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean sigmoid focal loss over valid anchor-class entries.

    Returns (value, d value / d logits). Empty valid set gives (0, zeros).
    """
    c = logits.shape[-1]
    targets = _one_hot_rows(class_target, c)
    w = (1.0 - 2.0 * targets) * logits          # p_t = sigmoid(-w)
    s = sigmoid(w)                               # s = 1 - p_t
    alpha_t = np.where(targets > 0, FOCAL_ALPHA, 1.0 - FOCAL_ALPHA)
    per_entry = alpha_t * np.power(s, FOCAL_GAMMA) * softplus(w)
    mask = valid_mask[..., None].astype(float)
    n = float(mask.sum() * c)
    if n == 0:
        return 0.0, np.zeros_like(logits)
    value = float((per_entry * mask).sum() / n)
    dw = alpha_t * np.power(s, FOCAL_GAMMA) * (
        FOCAL_GAMMA * (1.0 - s) * softplus(w) + s
    )
    dlogits = dw * (1.0 - 2.0 * targets) * mask / n
    return value, dlogits


def localization_loss(pred_offsets: np.ndarray,
                      target_offsets: np.ndarray) -> tuple[float, np.ndarray]:
    """MSE over the 2 * |positives| offset entries; (0, zeros) when empty."""
    if pred_offsets.shape != target_offsets.shape:
        raise ValidationError(
            f"offset shapes differ: {pred_offsets.shape} vs {target_offsets.shape}"
        )
    n = pred_offsets.size
    if n == 0:
        return 0.0, np.zeros_like(pred_offsets)
    diff = pred_offsets - target_offsets
    return float((diff * diff).sum() / n), 2.0 * diff / n


def task_loss(cls_losses: list[float], loc_losses: list[float],
              weights: TaskLossWeights) -> float:
    return weights.cls_weight * float(np.sum(cls_losses)) + \
        weights.loc_weight * float(np.sum(loc_losses))
