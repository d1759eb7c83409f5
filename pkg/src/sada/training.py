"""Min-max training loop: losses, optimizer, EMA weights, logging.

One optimization step runs both domains through the shared pyramid, builds
the supervised task loss from source matches, pseudo-labels the target
batch, adds whichever alignment losses the flags select, and performs a
single AdamW update. The adversarial sign lives inside the gradient
reversal, so minimizing the total trains the discriminators while pushing
the encoder the other way.

Bookkeeping rules that tests rely on:

* Optimizer moments are kept per parameter group (backbone, conditioning,
  discriminators); a group whose losses are disabled takes no step at all,
  so its parameters stay bit-identical (weight decay would otherwise move
  them).
* ``sada_weight = 0`` skips alignment entirely and logs 0, exactly like a
  run with every alignment flag off.
* The EMA copy covers backbone and conditioning parameters, never the
  discriminators, and inference uses it exclusively.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import alignment as al
from .anchors import build_grids, match, regression_ranges
from .config import RunConfig, config_from_dict, config_to_dict
from .data import (
    Dataset,
    PaddedView,
    build_batch,
    eval_windows,
    interleave_domains,
    pad_or_crop,
)
from .errors import CheckpointError, TrainingError, ValidationError
from .evaluation import map_report
from .heads import TaskLossWeights, focal_loss, localization_loss, task_loss
from .inference import mask_background, predict_dataset
from .layers import sigmoid
from .model import Model, build_model

CHECKPOINT_FORMAT = "sada-checkpoint"
CHECKPOINT_VERSION = 1


def lr_at(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup to base_lr, then cosine decay to 0 at total_steps."""
    if step < 0:
        raise ValidationError(f"step must be >= 0, got {step}")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    denom = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / denom)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


def total_loss(task: float, sada: float, task_weight: float, sada_weight: float) -> float:
    return task_weight * task + sada_weight * sada


def ema_update(live: np.ndarray, ema: np.ndarray, decay: float) -> np.ndarray:
    if live.shape != ema.shape:
        raise ValidationError(f"EMA shape mismatch {live.shape} vs {ema.shape}")
    return decay * ema + (1.0 - decay) * live


class AdamW:
    """Adam with decoupled weight decay and per-group step counters."""

    def __init__(self, groups: dict[str, list], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.groups = groups
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {p.name: np.zeros_like(p.value) for ps in groups.values() for p in ps}
        self.v = {p.name: np.zeros_like(p.value) for ps in groups.values() for p in ps}
        self.t = {name: 0 for name in groups}

    def step(self, active: list[str], lr: float, weight_decay: float) -> None:
        for g in active:
            self.t[g] += 1
            t = self.t[g]
            bc1 = 1.0 - self.beta1 ** t
            bc2 = 1.0 - self.beta2 ** t
            for p in self.groups[g]:
                m = self.m[p.name] = self.beta1 * self.m[p.name] + (1 - self.beta1) * p.grad
                v = self.v[p.name] = self.beta2 * self.v[p.name] + (1 - self.beta2) * p.grad ** 2
                update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                p.value -= lr * update + lr * weight_decay * p.value


@dataclass
class ModelState:
    model: Model
    ema: dict[str, np.ndarray]
    opt: AdamW
    step: int
    centroids: al.CentroidState

    def ema_model(self) -> Model:
        """Fresh Model carrying the EMA weights (discriminators untouched)."""
        m = build_model(self.model.cfg, self.model.class_count, seed=0)
        m.set_values(self.model.values())
        m.set_values(self.ema)
        return m


def create_state(cfg: RunConfig, class_count: int) -> ModelState:
    model = build_model(cfg.model, class_count, cfg.train.seed)
    ema = {p.name: p.value.copy() for p in model.ema_params()}
    opt = AdamW(model.param_groups())
    centroids = al.CentroidState.create(cfg.model.levels, class_count,
                                        cfg.model.feature_dim, cfg.train.mstn_decay)
    return ModelState(model=model, ema=ema, opt=opt, step=0, centroids=centroids)


@dataclass
class StepMetrics:
    task: float
    align: float
    total: float
    cls_loss: float
    loc_loss: float


def _level_targets(views: list[PaddedView], t_max: int, levels: int,
                   center_radius: float, base_range: float,
                   mask_fraction: float, mask_seed: int):
    """Stacked per-level match targets for a batch of padded windows."""
    grid_cache: dict[float, tuple] = {}
    per_level_cls = [[] for _ in range(levels)]
    per_level_off = [[] for _ in range(levels)]
    per_level_pos = [[] for _ in range(levels)]
    per_level_keep = [[] for _ in range(levels)]
    for vi, view in enumerate(views):
        stride = view.record.sequence.frame_stride_s
        if stride not in grid_cache:
            grids = build_grids(t_max, levels, stride)
            grid_cache[stride] = (grids, regression_ranges(levels, stride, base_range))
        grids, ranges = grid_cache[stride]
        matches = match(grids, view.segments, center_radius, ranges)
        for l, lm in enumerate(matches):
            per_level_cls[l].append(lm.class_target)
            per_level_off[l].append(lm.offset_target)
            per_level_pos[l].append(lm.positive_mask)
            if mask_fraction > 0.0:
                keep = mask_background(lm.class_target, mask_fraction, "training",
                                       mask_seed, level=l, window_start=vi)
            else:
                keep = np.ones(lm.class_target.shape[0], dtype=bool)
            per_level_keep[l].append(keep)
    stack = lambda rows: np.stack(rows)
    return ([stack(r) for r in per_level_cls], [stack(r) for r in per_level_off],
            [stack(r) for r in per_level_pos], [stack(r) for r in per_level_keep])


def train_step(state: ModelState, src_views: list[PaddedView],
               tgt_views: list[PaddedView], cfg: RunConfig, lr: float,
               mask_seed: int = 0) -> StepMetrics:
    model = state.model
    tcfg = cfg.train
    levels = cfg.model.levels
    level_weights = tcfg.resolved_level_weights(levels)
    t_max = src_views[0].features.shape[0]
    model.zero_grad()

    batch_s = build_batch(src_views)
    feats_s = model.pyramid.forward(batch_s.features, batch_s.valid_mask)
    cls_targets, off_targets, pos_masks, keep_masks = _level_targets(
        src_views, t_max, levels, cfg.anchors.center_radius_strides,
        cfg.anchors.base_range_strides, tcfg.mask_background_fraction, mask_seed)

    cls_total = 0.0
    loc_total = 0.0
    dz_s: list[np.ndarray] = []
    head_caches = []
    for l in range(levels):
        z, valid = feats_s.levels[l], feats_s.masks[l]
        logits, cls_cache = model.cls_head.forward(z, valid)
        offsets, loc_cache = model.loc_head.forward(z, valid)
        loss_valid = valid & keep_masks[l]
        cls_val, dlogits = focal_loss(logits, cls_targets[l], loss_valid)
        pos = pos_masks[l] & loss_valid
        loc_val, dpred = localization_loss(offsets[pos], off_targets[l][pos])
        cls_total += cls_val
        loc_total += loc_val
        doff = np.zeros_like(offsets)
        doff[pos] = dpred
        head_caches.append((cls_cache, dlogits, loc_cache, doff))
        dz_s.append(np.zeros_like(z))

    task_value = task_loss([cls_total], [loc_total],
                           TaskLossWeights(tcfg.cls_weight, tcfg.loc_weight))
    cls_scale = tcfg.task_weight * tcfg.cls_weight
    loc_scale = tcfg.task_weight * tcfg.loc_weight
    for l in range(levels):
        cls_cache, dlogits, loc_cache, doff = head_caches[l]
        dz_s[l] += model.cls_head.backward(cls_cache, dlogits * cls_scale)
        dz_s[l] += model.loc_head.backward(loc_cache, doff * loc_scale)

    align_value = 0.0
    if tcfg.alignment_enabled:
        batch_t = build_batch(tgt_views)
        feats_t = model.pyramid.forward(batch_t.features, batch_t.valid_mask)
        tgt_labels = []
        for l in range(levels):
            logits_t, _ = model.cls_head.forward(feats_t.levels[l], feats_t.masks[l])
            tgt_labels.append(al.pseudo_labels(sigmoid(logits_t),
                                               tcfg.pseudo_label_threshold))
        src_valid = [feats_s.masks[l] & keep_masks[l] for l in range(levels)]
        tgt_valid = [feats_t.masks[l] for l in range(levels)]
        groups = al.group_anchors(cls_targets, tgt_labels, src_valid, tgt_valid,
                                  model.class_count)
        z_s_flat = [feats_s.levels[l].reshape(-1, cfg.model.feature_dim)
                    for l in range(levels)]
        z_t_flat = [feats_t.levels[l].reshape(-1, cfg.model.feature_dim)
                    for l in range(levels)]
        sink = al.GradSink(
            lambda_grl=al.LAMBDA_GRL,
            dz_source=[np.zeros_like(z) for z in z_s_flat],
            dz_target=[np.zeros_like(z) for z in z_t_flat])
        local_vals = [0.0] * levels
        bkg_vals = [0.0] * levels
        for l in range(levels):
            w = tcfg.sada_weight * level_weights[l]
            if tcfg.loss_local:
                local_vals[l] = al.local_align_loss(
                    l, groups, z_s_flat[l], z_t_flat[l], model.discriminators[l],
                    model.conditioning, grad_weight=w, sink=sink)
            if tcfg.loss_bkg:
                bkg_vals[l] = al.bkg_align_loss(
                    l, groups, z_s_flat[l], z_t_flat[l], model.discriminators[l],
                    model.conditioning, grad_weight=w, sink=sink)
        align_value += al.sada_loss(local_vals, bkg_vals, list(level_weights))
        if tcfg.loss_global:
            align_value += al.global_dann_loss(
                z_s_flat, z_t_flat, src_valid, tgt_valid, model.discriminators,
                list(level_weights), grad_weight=tcfg.sada_weight, sink=sink)
        if tcfg.loss_mstn:
            mstn_val, state.centroids = al.mstn_centroid_loss(
                groups, z_s_flat, z_t_flat, state.centroids,
                grad_weight=tcfg.sada_weight, sink=sink)
            align_value += mstn_val
        dz_t = [sink.dz_target[l].reshape(feats_t.levels[l].shape) for l in range(levels)]
        model.pyramid.backward(feats_t, dz_t)
        for l in range(levels):
            dz_s[l] += sink.dz_source[l].reshape(feats_s.levels[l].shape)

    model.pyramid.backward(feats_s, dz_s)

    total = total_loss(task_value, align_value, tcfg.task_weight, tcfg.sada_weight)
    if not math.isfinite(total):
        raise TrainingError(
            f"non-finite loss at step {state.step}: task={task_value}, "
            f"align={align_value}"
        )

    active = ["backbone"]
    if tcfg.alignment_enabled:
        if (tcfg.loss_local or tcfg.loss_bkg) and model.conditioning.param is not None:
            active.append("conditioning")
        if tcfg.loss_local or tcfg.loss_bkg or tcfg.loss_global:
            active.append("discriminators")
    state.opt.step(active, lr, tcfg.weight_decay)

    for p in model.ema_params():
        state.ema[p.name] = ema_update(p.value, state.ema[p.name], tcfg.ema_decay)
    return StepMetrics(task=task_value, align=align_value, total=total,
                       cls_loss=cls_total, loc_loss=loc_total)


def evaluate_task_loss(model: Model, dataset: Dataset, cfg: RunConfig) -> float:
    """Mean per-window supervised task loss; the early-stopping monitor."""
    tcfg = cfg.train
    levels = cfg.model.levels
    weights = TaskLossWeights(tcfg.cls_weight, tcfg.loc_weight)
    vals = []
    for rec in dataset.records:
        for view in eval_windows(rec, cfg.data.t_max):
            batch = build_batch([view])
            feats = model.pyramid.forward(batch.features, batch.valid_mask)
            cls_targets, off_targets, pos_masks, _ = _level_targets(
                [view], cfg.data.t_max, levels, cfg.anchors.center_radius_strides,
                cfg.anchors.base_range_strides, 0.0, 0)
            cls_total = 0.0
            loc_total = 0.0
            for l in range(levels):
                z, valid = feats.levels[l], feats.masks[l]
                logits, _ = model.cls_head.forward(z, valid)
                offsets, _ = model.loc_head.forward(z, valid)
                cls_val, _ = focal_loss(logits, cls_targets[l], valid)
                pos = pos_masks[l] & valid
                loc_val, _ = localization_loss(offsets[pos], off_targets[l][pos])
                cls_total += cls_val
                loc_total += loc_val
            vals.append(task_loss([cls_total], [loc_total], weights))
    return float(np.mean(vals)) if vals else 0.0


def evaluate_target_map(state: ModelState, dataset: Dataset, cfg: RunConfig) -> float:
    model = state.ema_model()
    preds = predict_dataset(model, dataset.records, cfg.data.t_max, cfg.nms,
                            cfg.anchors.center_radius_strides,
                            cfg.anchors.base_range_strides)
    gts = {rec.video_id: rec.segments for rec in dataset.records}
    report = map_report(preds, gts, dataset.class_count, cfg.eval)
    return report.avg_map


@dataclass
class EpochLog:
    epoch: int
    lr: float
    task_loss: float
    sada_loss: float
    val_map: float = float("nan")


def write_metric_log(rows: list[EpochLog], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,lr,task_loss,sada_loss,val_map\n")
        for r in rows:
            vm = "" if math.isnan(r.val_map) else f"{r.val_map:.6f}"
            fh.write(f"{r.epoch},{r.lr:.10g},{r.task_loss:.10g},{r.sada_loss:.10g},{vm}\n")


def fit(cfg: RunConfig, source_train: Dataset, target_train: Dataset,
        source_val: Dataset | None = None, target_val: Dataset | None = None,
        log_path=None) -> tuple[ModelState, list[EpochLog]]:
    """Train a model; returns the final state and the per-epoch metric log.

    Early stopping watches the source-val task loss (live weights) with
    the configured patience and restores the best-epoch snapshot (live and
    EMA) when it fires or when training ends.
    """
    cfg.validate()
    if source_train.class_count != target_train.class_count:
        raise ValidationError("domains disagree on class_count")
    tcfg = cfg.train
    state = create_state(cfg, source_train.class_count)
    spe = math.ceil(max(len(source_train.records), len(target_train.records))
                    / tcfg.per_domain_batch)
    total_steps = tcfg.epochs * spe
    warmup_steps = tcfg.warmup_epochs * spe

    logs: list[EpochLog] = []
    best_loss = math.inf
    best_snapshot: tuple[dict, dict] | None = None
    bad_epochs = 0
    for epoch in range(tcfg.epochs):
        rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 101, epoch]))
        task_sum = 0.0
        align_sum = 0.0
        n_iter = 0
        last_lr = 0.0
        for it, (src_recs, tgt_recs) in enumerate(interleave_domains(
                source_train.records, target_train.records,
                tcfg.per_domain_batch, rng)):
            src_views = [pad_or_crop(r, cfg.data.t_max, True, rng) for r in src_recs]
            tgt_views = [pad_or_crop(r, cfg.data.t_max, True, rng) for r in tgt_recs]
            last_lr = lr_at(state.step, tcfg.lr, warmup_steps, total_steps)
            metrics = train_step(state, src_views, tgt_views, cfg, last_lr,
                                 mask_seed=tcfg.seed * 100003 + epoch * 1009 + it)
            state.step += 1
            task_sum += metrics.task
            align_sum += metrics.align
            n_iter += 1

        stopping = False
        if source_val is not None:
            val_loss = evaluate_task_loss(state.model, source_val, cfg)
            if val_loss < best_loss - 1e-12:
                best_loss = val_loss
                best_snapshot = (state.model.values(),
                                 {k: v.copy() for k, v in state.ema.items()})
                bad_epochs = 0
            else:
                bad_epochs += 1
                if tcfg.early_stop_patience > 0 and bad_epochs >= tcfg.early_stop_patience:
                    stopping = True

        last_epoch = stopping or epoch == tcfg.epochs - 1
        if last_epoch and best_snapshot is not None:
            live, ema = best_snapshot
            state.model.set_values(live)
            state.ema = {k: v.copy() for k, v in ema.items()}

        val_map = float("nan")
        if target_val is not None and (
                last_epoch or (tcfg.eval_map_every > 0
                               and (epoch + 1) % tcfg.eval_map_every == 0)):
            val_map = evaluate_target_map(state, target_val, cfg)
        logs.append(EpochLog(epoch=epoch, lr=last_lr, task_loss=task_sum / n_iter,
                             sada_loss=align_sum / n_iter, val_map=val_map))
        if stopping:
            break
    if log_path is not None:
        write_metric_log(logs, log_path)
    return state, logs


def save_checkpoint(state: ModelState, cfg: RunConfig, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for p in state.model.all_params():
        arrays["live::" + p.name] = p.value
        arrays["m::" + p.name] = state.opt.m[p.name]
        arrays["v::" + p.name] = state.opt.v[p.name]
    for name, v in state.ema.items():
        arrays["ema::" + name] = v
    arrays["cent::source"] = state.centroids.source
    arrays["cent::target"] = state.centroids.target
    arrays["cent::source_init"] = state.centroids.source_init
    arrays["cent::target_init"] = state.centroids.target_init
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "opt_t": state.opt.t,
        "class_count": state.model.class_count,
        "config": config_to_dict(cfg),
    }
    blob = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    # np.savez appends ".npz" to bare paths; a handle writes exactly here
    with open(path, "wb") as fh:
        np.savez(fh, meta=blob, **arrays)


def load_checkpoint(path) -> tuple[ModelState, RunConfig]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} not found")
    try:
        npz = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "meta" not in npz:
        raise CheckpointError(f"{path}: missing metadata entry")
    meta = json.loads(bytes(npz["meta"]))
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a model checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {meta.get('version')}")
    cfg = config_from_dict(meta["config"])
    state = create_state(cfg, int(meta["class_count"]))
    live = {}
    for p in state.model.all_params():
        key = "live::" + p.name
        if key not in npz:
            raise CheckpointError(f"{path}: missing parameter {p.name}")
        live[p.name] = npz[key]
        state.opt.m[p.name] = npz["m::" + p.name].astype(np.float64)
        state.opt.v[p.name] = npz["v::" + p.name].astype(np.float64)
    state.model.set_values(live)
    ema = {}
    for p in state.model.ema_params():
        key = "ema::" + p.name
        if key not in npz:
            raise CheckpointError(f"{path}: missing EMA entry for {p.name}")
        ema[p.name] = npz[key].astype(np.float64)
    state.ema = ema
    state.step = int(meta["step"])
    state.opt.t = {k: int(v) for k, v in meta["opt_t"].items()}
    state.centroids.source = npz["cent::source"].astype(np.float64)
    state.centroids.target = npz["cent::target"].astype(np.float64)
    state.centroids.source_init = npz["cent::source_init"].astype(bool)
    state.centroids.target_init = npz["cent::target_init"].astype(bool)
    return state, cfg
