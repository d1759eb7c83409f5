"""Minimal numpy layer toolkit with explicit forward/backward passes.

Every layer is functional: ``forward`` returns the output plus an opaque
cache, ``backward`` consumes that cache and the upstream gradient, adds the
parameter gradients in place, and returns the input gradient. Caches are
per-call so one parameter set can run several times per step (shared heads
across levels and domains). All math is float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError


class Param:
    """A trainable array with an accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:  # pragma: no cover
        return f"Param({self.name}, shape={self.value.shape})"


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Elementwise binary cross-entropy on logits, numerically stable."""
    return np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))


def bce_with_logits_grad(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return sigmoid(logits) - targets


class Linear:
    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator):
        scale = np.sqrt(2.0 / in_dim)
        self.w = Param(f"{name}.w", rng.standard_normal((in_dim, out_dim)) * scale)
        self.b = Param(f"{name}.b", np.zeros(out_dim))
        self.params = [self.w, self.b]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        return x @ self.w.value + self.b.value, (x,)

    def backward(self, cache: tuple, dy: np.ndarray) -> np.ndarray:
        (x,) = cache
        self.w.grad += x.T @ dy
        self.b.grad += dy.sum(axis=0)
        return dy @ self.w.value.T


class Conv1d:
    """Same-padded temporal convolution over (B, T, C_in) inputs."""

    def __init__(self, name: str, in_dim: int, out_dim: int, kernel: int,
                 rng: np.random.Generator):
        if kernel % 2 != 1:
            raise ValidationError(f"kernel must be odd, got {kernel}")
        self.kernel = kernel
        self.in_dim = in_dim
        scale = np.sqrt(2.0 / (kernel * in_dim))
        self.w = Param(f"{name}.w", rng.standard_normal((kernel * in_dim, out_dim)) * scale)
        self.b = Param(f"{name}.b", np.zeros(out_dim))
        self.params = [self.w, self.b]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        b, t, c = x.shape
        pad = self.kernel // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        # (B, T, C, K) -> (B, T, K, C) -> (B*T, K*C)
        cols = sliding_window_view(xp, self.kernel, axis=1).transpose(0, 1, 3, 2)
        cols = np.ascontiguousarray(cols).reshape(b * t, self.kernel * c)
        y = cols @ self.w.value + self.b.value
        return y.reshape(b, t, -1), (cols, (b, t, c))

    def backward(self, cache: tuple, dy: np.ndarray) -> np.ndarray:
        cols, (b, t, c) = cache
        pad = self.kernel // 2
        dy_flat = dy.reshape(b * t, -1)
        self.w.grad += cols.T @ dy_flat
        self.b.grad += dy_flat.sum(axis=0)
        dcols = (dy_flat @ self.w.value.T).reshape(b, t, self.kernel, c)
        dxp = np.zeros((b, t + 2 * pad, c))
        for k in range(self.kernel):
            dxp[:, k:k + t, :] += dcols[:, :, k, :]
        return dxp[:, pad:pad + t, :]


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return x * mask, mask


def relu_backward(mask: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * mask


def mask_zero_forward(x: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Zero features at padded positions; ``valid`` is (B, T) bool."""
    return x * valid[..., None]


def mask_zero_backward(valid: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * valid[..., None]


def masked_max_pool2(x: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray, tuple]:
    """Stride-2 max pooling along time that ignores padded positions.

    A pooled position is valid when either input position is; a fully
    padded pair outputs zeros. Returns (pooled, pooled_valid, cache).
    """
    b, t, c = x.shape
    if t % 2 != 0:
        raise ValueError(f"time length {t} not divisible by 2")
    pairs = x.reshape(b, t // 2, 2, c)
    pair_valid = valid.reshape(b, t // 2, 2)
    neg = np.where(pair_valid[..., None], pairs, -np.inf)
    idx = np.argmax(neg, axis=2)                       # (B, T/2, C)
    out_valid = pair_valid.any(axis=2)
    pooled = np.take_along_axis(pairs, idx[:, :, None, :], axis=2)[:, :, 0, :]
    pooled = pooled * out_valid[..., None]
    return pooled, out_valid, (idx, out_valid, (b, t, c))


def masked_max_pool2_backward(cache: tuple, dy: np.ndarray) -> np.ndarray:
    idx, out_valid, (b, t, c) = cache
    dy = dy * out_valid[..., None]
    dpairs = np.zeros((b, t // 2, 2, c))
    np.put_along_axis(dpairs, idx[:, :, None, :], dy[:, :, None, :], axis=2)
    return dpairs.reshape(b, t, c)
