"""Command-line entry point: gen-bench, train, eval, ablate, report.

Thin single-threaded orchestrator over the library modules. Every command
is idempotent given identical inputs and seeds. Exit codes: 0 on success,
1 on validation errors (bad flags, bad configs, malformed inputs), 2 on
unexpected runtime failures.

SADA_NUM_THREADS, when set, bounds BLAS worker threads; it must be decided
before numpy spins up its thread pools, so this module exports it at
import time.
"""

from __future__ import annotations

import os

_threads = os.environ.get("SADA_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import alignment as al
from .ablate import (
    GRID_NAMES,
    GridDatasets,
    compare_rows,
    named_grid,
    read_results_csv,
    render_comparison,
    render_table,
    run_grid,
    write_grid_outputs,
)
from .config import RunConfig, load_config, save_config
from .data import Dataset, build_batch, pad_or_crop
from .errors import SadaError, ValidationError
from .evaluation import map_report, write_report
from .inference import predict_dataset, write_predictions
from .layers import sigmoid
from .synthbench import (
    BenchSpec,
    ShiftSpec,
    read_benchmark_dir,
    summarize,
    write_benchmark_dir,
)
from .training import (
    ModelState,
    _level_targets,
    fit,
    load_checkpoint,
    save_checkpoint,
)


class _Parser(argparse.ArgumentParser):
    """Flag misuse is a validation error (exit 1), not a runtime failure."""

    def error(self, message):
        raise ValidationError(message)


def _check_in_dim(cfg: RunConfig, datasets: dict[str, Dataset]) -> None:
    dim = datasets["source_train"].records[0].sequence.feature_dim
    if dim != cfg.model.in_dim:
        raise ValidationError(
            f"benchmark features have dim {dim} but config says model.in_dim = "
            f"{cfg.model.in_dim}; set [model] in_dim to match"
        )


def cmd_gen_bench(args) -> int:
    bench = BenchSpec(
        class_count=args.classes,
        videos_per_domain=args.videos,
        num_steps=args.steps,
        feature_dim=args.features,
        segments_min=args.seg_min,
        segments_max=args.seg_max,
        min_segment_len=args.min_len,
        max_segment_len=args.max_len,
        min_gap=args.min_gap,
        frame_stride_s=args.stride,
    )
    rotation = args.rotation if args.rotation is not None else args.shift
    offset = args.offset if args.offset is not None else args.shift
    shift = ShiftSpec(rotation_angle_rad=rotation, offset_scale=offset,
                      noise_sigma=args.noise, seed=args.seed)
    datasets = write_benchmark_dir(bench, shift, args.out,
                                   val_videos_per_domain=args.val_videos)
    print(f"wrote benchmark to {args.out}")
    for name, ds in datasets.items():
        s = summarize(ds)
        print(f"  {name}: {s['video_count']} videos, {s['total_segments']} segments, "
              f"mean len {s['mean_segment_len_s']:.2f}s")
    return 0


def _dump_embeddings(state: ModelState, cfg: RunConfig, source: Dataset,
                     target: Dataset, path) -> None:
    """Grouped anchor embeddings of one deterministic batch, EMA weights."""
    model = state.ema_model()
    b = cfg.train.per_domain_batch
    rng = np.random.default_rng(np.random.SeedSequence([cfg.train.seed, 999]))
    src_views = [pad_or_crop(r, cfg.data.t_max, True, rng) for r in source.records[:b]]
    tgt_views = [pad_or_crop(r, cfg.data.t_max, True, rng) for r in target.records[:b]]
    batch_s = build_batch(src_views)
    batch_t = build_batch(tgt_views)
    feats_s = model.pyramid.forward(batch_s.features, batch_s.valid_mask)
    feats_t = model.pyramid.forward(batch_t.features, batch_t.valid_mask)
    levels = cfg.model.levels
    cls_targets, _, _, _ = _level_targets(
        src_views, cfg.data.t_max, levels, cfg.anchors.center_radius_strides,
        cfg.anchors.base_range_strides, 0.0, 0)
    tgt_labels = []
    for l in range(levels):
        logits, _ = model.cls_head.forward(feats_t.levels[l], feats_t.masks[l])
        tgt_labels.append(al.pseudo_labels(sigmoid(logits),
                                           cfg.train.pseudo_label_threshold))
    groups = al.group_anchors(cls_targets, tgt_labels, feats_s.masks, feats_t.masks,
                              model.class_count)
    f = cfg.model.feature_dim
    z_s = [feats_s.levels[l].reshape(-1, f) for l in range(levels)]
    z_t = [feats_t.levels[l].reshape(-1, f) for l in range(levels)]
    al.dump_group_embeddings(path, groups, z_s, z_t)


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.sada is not None:
        cfg.train.sada_weight = args.sada
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.alpha is not None:
        cfg.train.pseudo_label_threshold = args.alpha
    cfg.validate()

    datasets = read_benchmark_dir(args.data)
    _check_in_dim(cfg, datasets)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.toml")

    state, logs = fit(cfg, datasets["source_train"], datasets["target_train"],
                      datasets["source_val"], datasets["target_val"],
                      log_path=out / "metrics.csv")
    save_checkpoint(state, cfg, out / "checkpoint.npz")
    if args.dump_embeddings:
        _dump_embeddings(state, cfg, datasets["source_train"],
                         datasets["target_train"], out / "embeddings.csv")
    last = logs[-1]
    val_map = "n/a" if math.isnan(last.val_map) else f"{last.val_map:.4f}"
    print(f"trained {len(logs)} epochs; final task loss {last.task_loss:.4f}, "
          f"sada loss {last.sada_loss:.4f}, target-val mAP {val_map}")
    print(f"checkpoint: {out / 'checkpoint.npz'}")
    return 0


def cmd_eval(args) -> int:
    state, cfg = load_checkpoint(args.checkpoint)
    datasets = read_benchmark_dir(args.data)
    key = f"{args.domain}_{args.split}"
    if key not in datasets:
        raise ValidationError(f"benchmark has no split {key!r}")
    dataset = datasets[key]
    model = state.ema_model()
    preds = predict_dataset(model, dataset.records, cfg.data.t_max, cfg.nms,
                            cfg.anchors.center_radius_strides,
                            cfg.anchors.base_range_strides,
                            mask_fraction=args.mask_background,
                            mask_seed=args.seed)
    gts = {rec.video_id: rec.segments for rec in dataset.records}
    report = map_report(preds, gts, dataset.class_count, cfg.eval)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(out / "predictions.jsonl", preds)
    write_report(report, out / "report.csv", out / "report.json")
    print(f"evaluated {key}: avg mAP {report.avg_map:.4f}")
    for t, m in zip(report.thresholds, report.map_per_threshold):
        print(f"  mAP@{t:.2f}: {m:.4f}")
    return 0


_GRID_COMPARISONS = {
    "table4": [("local+bkg", "none")],
    "baselines": [("sada", "source_only"), ("sada", "dann")],
    "mask-bkg": [("mask_100", "mask_0")],
}


def cmd_ablate(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg.validate()
    if args.seeds < 1:
        raise ValidationError(f"--seeds must be >= 1, got {args.seeds}")
    seeds = tuple(range(1, args.seeds + 1))
    grid = named_grid(args.grid, cfg, seeds)
    grid.out_dir = args.out
    datasets = read_benchmark_dir(args.data)
    _check_in_dim(cfg, datasets)
    data = GridDatasets(
        source_train=datasets["source_train"], target_train=datasets["target_train"],
        source_val=datasets["source_val"], target_val=datasets["target_val"])
    result = run_grid(grid, cfg, data, progress=lambda msg: print(msg, flush=True))
    csv_path, table_path = write_grid_outputs(result, args.out)
    print(render_table(result))
    for row_a, row_b in _GRID_COMPARISONS.get(args.grid, []):
        print(render_comparison(compare_rows(result, row_a, row_b)))
    print(f"results: {csv_path}")
    print(f"table: {table_path}")
    return 0


def cmd_report(args) -> int:
    result = read_results_csv(args.results)
    stem = Path(args.results).stem
    result.grid_name = stem[:-len("_results")] if stem.endswith("_results") else stem
    print(render_table(result))
    if args.compare:
        row_a, row_b = args.compare
        print(render_comparison(compare_rows(result, row_a, row_b)))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="sada", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-bench", help="generate a synthetic paired benchmark")
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--videos", type=int, default=20, help="train videos per domain")
    g.add_argument("--val-videos", type=int, default=None,
                   help="val videos per domain (default: videos/4, at least 2)")
    g.add_argument("--steps", type=int, default=128, help="frames per video")
    g.add_argument("--features", type=int, default=16, help="feature dimension")
    g.add_argument("--seg-min", type=int, default=2)
    g.add_argument("--seg-max", type=int, default=4)
    g.add_argument("--min-len", type=int, default=4)
    g.add_argument("--max-len", type=int, default=24)
    g.add_argument("--min-gap", type=int, default=2)
    g.add_argument("--stride", type=float, default=1.0, help="seconds per frame")
    g.add_argument("--shift", type=float, default=0.5,
                   help="sets rotation (rad) and offset scale together")
    g.add_argument("--rotation", type=float, default=None,
                   help="override rotation angle in radians")
    g.add_argument("--offset", type=float, default=None,
                   help="override offset scale")
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_bench)

    t = sub.add_parser("train", help="train a model on a benchmark directory")
    t.add_argument("--config", default=None, help="TOML config file")
    t.add_argument("--data", required=True, help="benchmark directory")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--sada", type=float, default=None,
                   help="override alignment loss weight (0 = source-only)")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--alpha", type=float, default=None,
                   help="override pseudo-label confidence threshold")
    t.add_argument("--dump-embeddings", action="store_true",
                   help="write grouped anchor embeddings CSV after training")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="benchmark directory")
    e.add_argument("--domain", choices=("source", "target"), default="target")
    e.add_argument("--split", choices=("train", "val"), default="val")
    e.add_argument("--mask-background", type=float, default=0.0,
                   help="fraction of background anchors dropped before decoding")
    e.add_argument("--seed", type=int, default=0, help="background-mask seed")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run a predefined ablation grid")
    a.add_argument("--grid", required=True,
                   help=f"grid name: {', '.join(GRID_NAMES)}")
    a.add_argument("--data", required=True, help="benchmark directory")
    a.add_argument("--config", default=None, help="base TOML config")
    a.add_argument("--seeds", type=int, default=5, help="number of seeds (1..N)")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="render a grid results CSV")
    r.add_argument("--results", required=True, help="grid results CSV path")
    r.add_argument("--compare", nargs=2, metavar=("ROW_A", "ROW_B"), default=None)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SadaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - contract maps surprises to exit 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
