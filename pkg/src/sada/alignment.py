"""Adversarial and centroid alignment losses over grouped anchor embeddings.

Anchors from both domains are grouped per (level, class) using ground truth
on the source side and thresholded pseudo-labels on the target side
(anchors failing the threshold join the background group 0). Each pyramid
level owns one domain discriminator, an MLP on the concatenation of an
anchor embedding and its class conditioning vector, trained to emit 1 for
source rows and 0 for target rows. The anchor-embedding path passes through
a gradient reversal, so a single minimization step trains the discriminator
while pushing the encoder toward domain-invariant features. Conditioning
vectors sit on the discriminator side of the reversal: their gradients are
not flipped.

Gradient plumbing: loss functions accept an optional :class:`GradSink`.
When given, each term immediately accumulates discriminator/conditioning
parameter gradients and adds the (reversed) anchor gradients into the
sink's per-level buffers, scaled by the term's weight in the total
objective. Without a sink the functions are pure forward evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .layers import Linear, Param, bce_with_logits, relu_backward, relu_forward, sigmoid

LAMBDA_GRL = 1.0
CONDITIONING_MODES = ("learnable", "one_hot", "random_fixed", "sinusoidal")


def grl_forward(x: np.ndarray, lambda_grl: float) -> np.ndarray:
    """Identity; exists to make the reversal contract explicit."""
    if lambda_grl < 0:
        raise ValidationError(f"lambda_grl must be >= 0, got {lambda_grl}")
    return x


def grl_backward(dy: np.ndarray, lambda_grl: float) -> np.ndarray:
    """Upstream gradient is -lambda_grl times the incoming gradient."""
    return -lambda_grl * dy


@dataclass
class PseudoLabelConfig:
    alpha: float = 0.6

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError(f"alpha must be in (0, 1), got {self.alpha}")


def pseudo_labels(probs: np.ndarray, alpha: float) -> np.ndarray:
    """Hard labels in [0, C]: argmax class when its probability beats alpha."""
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
        raise ValidationError("probabilities must lie in [0, 1]")
    best = np.argmax(probs, axis=-1)
    conf = np.take_along_axis(probs, best[..., None], axis=-1)[..., 0]
    return np.where(conf > alpha, best + 1, 0).astype(np.int64)


class ClassConditioning:
    """Per-class vectors e_i in R^F for i in {0..C}; 0 conditions background."""

    def __init__(self, mode: str, class_count: int, feature_dim: int,
                 rng: np.random.Generator):
        if mode not in CONDITIONING_MODES:
            raise ValidationError(f"conditioning mode must be one of {CONDITIONING_MODES}")
        self.mode = mode
        self.class_count = class_count
        self.feature_dim = feature_dim
        n = class_count + 1
        if mode == "learnable":
            init = rng.standard_normal((n, feature_dim)) / np.sqrt(feature_dim)
            self.param: Param | None = Param("conditioning.emb", init)
            self._fixed = None
        else:
            self.param = None
            if mode == "one_hot":
                if feature_dim < n:
                    raise ValidationError(
                        f"one_hot conditioning needs feature_dim >= {n}, got {feature_dim}"
                    )
                fixed = np.zeros((n, feature_dim))
                fixed[np.arange(n), np.arange(n)] = 1.0
            elif mode == "random_fixed":
                fixed = rng.standard_normal((n, feature_dim))
                fixed /= np.linalg.norm(fixed, axis=1, keepdims=True)
            else:  # sinusoidal
                pos = np.arange(n)[:, None]
                dim = np.arange(feature_dim)[None, :]
                angle = pos / np.power(10000.0, 2.0 * (dim // 2) / feature_dim)
                fixed = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
            self._fixed = fixed

    def rows(self) -> np.ndarray:
        return self.param.value if self.param is not None else self._fixed

    @property
    def params(self) -> list[Param]:
        return [self.param] if self.param is not None else []


class DomainDiscriminator:
    """Per-level MLP: (2F) -> width^depth -> 1 logit."""

    def __init__(self, name: str, feature_dim: int, width: int, depth: int,
                 rng: np.random.Generator):
        dims = [2 * feature_dim] + [width] * depth + [1]
        self.layers = [
            Linear(f"{name}.fc{k}", dims[k], dims[k + 1], rng) for k in range(len(dims) - 1)
        ]
        self.params: list[Param] = [p for layer in self.layers for p in layer.params]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        caches = []
        h = x
        for k, layer in enumerate(self.layers):
            h, lin_cache = layer.forward(h)
            if k < len(self.layers) - 1:
                h, relu_mask = relu_forward(h)
            else:
                relu_mask = None
            caches.append((lin_cache, relu_mask))
        return h[:, 0], caches

    def backward(self, caches: tuple, dlogits: np.ndarray) -> np.ndarray:
        dy = dlogits[:, None]
        for layer, (lin_cache, relu_mask) in zip(reversed(self.layers), reversed(caches)):
            if relu_mask is not None:
                dy = relu_backward(relu_mask, dy)
            dy = layer.backward(lin_cache, dy)
        return dy


@dataclass
class AnchorGroups:
    """Flat per-(level, class, domain) anchor indices into (B*T_l) rows."""

    class_count: int
    source: list[dict[int, np.ndarray]]
    target: list[dict[int, np.ndarray]]


def _bucketize(labels: np.ndarray, valid: np.ndarray, class_count: int) -> dict[int, np.ndarray]:
    flat_labels = labels.reshape(-1)
    flat_valid = valid.reshape(-1)
    return {
        i: np.nonzero(flat_valid & (flat_labels == i))[0]
        for i in range(class_count + 1)
    }


def group_anchors(source_labels: list[np.ndarray], target_labels: list[np.ndarray],
                  source_valid: list[np.ndarray], target_valid: list[np.ndarray],
                  class_count: int) -> AnchorGroups:
    """Bucket valid anchors by label per level; labels in [0, C]."""
    if len(source_labels) != len(target_labels):
        raise ValidationError("level counts differ between domains")
    src = [_bucketize(l, v, class_count) for l, v in zip(source_labels, source_valid)]
    tgt = [_bucketize(l, v, class_count) for l, v in zip(target_labels, target_valid)]
    return AnchorGroups(class_count=class_count, source=src, target=tgt)


@dataclass
class GradSink:
    """Destination buffers for alignment gradients.

    dz_source/dz_target hold one (B*T_l, F) array per level; anchor-path
    gradients arrive already reversed (times -lambda_grl).
    """

    lambda_grl: float
    dz_source: list[np.ndarray]
    dz_target: list[np.ndarray]


def _domain_term(disc: DomainDiscriminator, z_flat: np.ndarray, idx: np.ndarray,
                 cond_row: np.ndarray, domain_target: float, *,
                 cond_param: Param | None, cond_index: int,
                 grad_weight: float, sink: GradSink | None,
                 dz: np.ndarray | None) -> float:
    """Mean BCE of D on one (level, class, domain) group; 0 when empty."""
    if idx.size == 0:
        return 0.0
    rows = z_flat[idx]
    feat = grl_forward(rows, sink.lambda_grl if sink is not None else LAMBDA_GRL)
    x = np.concatenate([feat, np.broadcast_to(cond_row, rows.shape)], axis=1)
    logits, cache = disc.forward(x)
    value = float(bce_with_logits(logits, np.full(idx.size, domain_target)).mean())
    if sink is not None and grad_weight != 0.0:
        dlogits = grad_weight * (sigmoid(logits) - domain_target) / idx.size
        dx = disc.backward(cache, dlogits)
        f = rows.shape[1]
        danchor = grl_backward(dx[:, :f], sink.lambda_grl)
        np.add.at(dz, idx, danchor)
        if cond_param is not None:
            cond_param.grad[cond_index] += dx[:, f:].sum(axis=0)
    return value


def local_align_loss(level: int, groups: AnchorGroups, z_s_flat: np.ndarray,
                     z_t_flat: np.ndarray, disc: DomainDiscriminator,
                     cond: ClassConditioning, grad_weight: float = 0.0,
                     sink: GradSink | None = None) -> float:
    """Class-wise (i >= 1) source-vs-target BCE sum at one level."""
    rows = cond.rows()
    total = 0.0
    for i in range(1, groups.class_count + 1):
        total += _domain_term(
            disc, z_s_flat, groups.source[level][i], rows[i], 1.0,
            cond_param=cond.param, cond_index=i, grad_weight=grad_weight,
            sink=sink, dz=sink.dz_source[level] if sink else None)
        total += _domain_term(
            disc, z_t_flat, groups.target[level][i], rows[i], 0.0,
            cond_param=cond.param, cond_index=i, grad_weight=grad_weight,
            sink=sink, dz=sink.dz_target[level] if sink else None)
    return total


def bkg_align_loss(level: int, groups: AnchorGroups, z_s_flat: np.ndarray,
                   z_t_flat: np.ndarray, disc: DomainDiscriminator,
                   cond: ClassConditioning, grad_weight: float = 0.0,
                   sink: GradSink | None = None) -> float:
    """Background-group (i = 0) source-vs-target BCE at one level."""
    rows = cond.rows()
    total = _domain_term(
        disc, z_s_flat, groups.source[level][0], rows[0], 1.0,
        cond_param=cond.param, cond_index=0, grad_weight=grad_weight,
        sink=sink, dz=sink.dz_source[level] if sink else None)
    total += _domain_term(
        disc, z_t_flat, groups.target[level][0], rows[0], 0.0,
        cond_param=cond.param, cond_index=0, grad_weight=grad_weight,
        sink=sink, dz=sink.dz_target[level] if sink else None)
    return total


def sada_loss(local_losses: list[float], bkg_losses: list[float],
              level_weights: list[float]) -> float:
    """Level-weighted sum of local plus background alignment terms."""
    if not (len(local_losses) == len(bkg_losses) == len(level_weights)):
        raise ValidationError("per-level loss and weight lengths differ")
    return float(sum(
        w * (lo + bk) for w, lo, bk in zip(level_weights, local_losses, bkg_losses)
    ))


def global_dann_loss(z_s_flats: list[np.ndarray], z_t_flats: list[np.ndarray],
                     valid_s: list[np.ndarray], valid_t: list[np.ndarray],
                     discs: list[DomainDiscriminator], level_weights: list[float],
                     grad_weight: float = 0.0, sink: GradSink | None = None) -> float:
    """Class-agnostic per-level alignment; conditioning slot is all zeros."""
    if len(discs) != len(level_weights):
        raise ValidationError("level weight count does not match discriminators")
    total = 0.0
    for level, disc in enumerate(discs):
        f = z_s_flats[level].shape[1]
        zero_row = np.zeros(f)
        idx_s = np.nonzero(valid_s[level].reshape(-1))[0]
        idx_t = np.nonzero(valid_t[level].reshape(-1))[0]
        w = grad_weight * level_weights[level]
        term = _domain_term(
            disc, z_s_flats[level], idx_s, zero_row, 1.0,
            cond_param=None, cond_index=0, grad_weight=w, sink=sink,
            dz=sink.dz_source[level] if sink else None)
        term += _domain_term(
            disc, z_t_flats[level], idx_t, zero_row, 0.0,
            cond_param=None, cond_index=0, grad_weight=w, sink=sink,
            dz=sink.dz_target[level] if sink else None)
        total += level_weights[level] * term
    return total


@dataclass
class CentroidState:
    """EMA class centroids per (level, class, domain); class 0 unused."""

    decay: float
    source: np.ndarray        # (L, C+1, F)
    target: np.ndarray
    source_init: np.ndarray   # (L, C+1) bool
    target_init: np.ndarray

    @classmethod
    def create(cls, levels: int, class_count: int, feature_dim: int,
               decay: float) -> "CentroidState":
        if not (0.0 <= decay <= 1.0):
            raise ValidationError(f"centroid decay must be in [0, 1], got {decay}")
        shape = (levels, class_count + 1, feature_dim)
        return cls(decay=decay, source=np.zeros(shape), target=np.zeros(shape),
                   source_init=np.zeros(shape[:2], dtype=bool),
                   target_init=np.zeros(shape[:2], dtype=bool))

    def copy(self) -> "CentroidState":
        return CentroidState(decay=self.decay, source=self.source.copy(),
                             target=self.target.copy(),
                             source_init=self.source_init.copy(),
                             target_init=self.target_init.copy())


def mstn_centroid_loss(groups: AnchorGroups, z_s_flats: list[np.ndarray],
                       z_t_flats: list[np.ndarray], state: CentroidState,
                       grad_weight: float = 0.0,
                       sink: GradSink | None = None) -> tuple[float, CentroidState]:
    """EMA-centroid MSE between domains, averaged over initialized pairs.

    Action classes only (i >= 1). A group's first non-empty batch sets its
    centroid to the batch mean; afterwards C <- decay*C + (1-decay)*mean.
    Gradients flow into both domains' rows through the batch-mean
    contribution (no reversal; both sides are pulled together).
    """
    new = state.copy()
    theta = state.decay
    levels = len(z_s_flats)
    batch_frac: dict[tuple[int, int, str], tuple[np.ndarray, float]] = {}
    for level in range(levels):
        for i in range(1, groups.class_count + 1):
            for dom, z_flat, cent, init in (
                ("source", z_s_flats[level], new.source, new.source_init),
                ("target", z_t_flats[level], new.target, new.target_init),
            ):
                idx = (groups.source if dom == "source" else groups.target)[level][i]
                if idx.size == 0:
                    continue
                chat = z_flat[idx].mean(axis=0)
                if init[level, i]:
                    cent[level, i] = theta * cent[level, i] + (1.0 - theta) * chat
                    frac = 1.0 - theta
                else:
                    cent[level, i] = chat
                    init[level, i] = True
                    frac = 1.0
                batch_frac[(level, i, dom)] = (idx, frac)

    pairs = [
        (level, i)
        for level in range(levels)
        for i in range(1, groups.class_count + 1)
        if new.source_init[level, i] and new.target_init[level, i]
    ]
    if not pairs:
        return 0.0, new
    f = z_s_flats[0].shape[1]
    total = 0.0
    for level, i in pairs:
        diff = new.source[level, i] - new.target[level, i]
        total += float((diff * diff).mean())
        if sink is not None and grad_weight != 0.0:
            dcent = 2.0 * diff / (f * len(pairs)) * grad_weight
            for dom, dz, sign in (("source", sink.dz_source, 1.0),
                                  ("target", sink.dz_target, -1.0)):
                hit = batch_frac.get((level, i, dom))
                if hit is None:
                    continue  # centroid came wholly from earlier batches
                idx, frac = hit
                np.add.at(dz[level], idx, sign * dcent * frac / idx.size)
    return total / len(pairs), new


def dump_group_embeddings(path, groups: AnchorGroups, z_s_flats: list[np.ndarray],
                          z_t_flats: list[np.ndarray]) -> None:
    """CSV rows (level, class, domain, e_0..e_{F-1}) for offline projection."""
    f = z_s_flats[0].shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("level,class,domain," + ",".join(f"e{k}" for k in range(f)) + "\n")
        for level in range(len(z_s_flats)):
            for i in range(groups.class_count + 1):
                for dom, z_flat, table in (("source", z_s_flats[level], groups.source),
                                           ("target", z_t_flats[level], groups.target)):
                    for row in z_flat[table[level][i]]:
                        vals = ",".join(f"{v:.6g}" for v in row)
                        fh.write(f"{level},{i},{dom},{vals}\n")
