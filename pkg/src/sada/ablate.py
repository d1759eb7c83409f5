"""Scripted ablation grids: loss combinations, level-weight strategies,
conditioning variants, background-mask sweeps, and baseline comparisons.

A grid is a named list of config deltas plus a list of seeds. Every cell
is one (row, seed) pair: train with the delta applied, evaluate target-val
mAP on the EMA weights, record the number. Cells are independent given
their seeds, so permuting grid order never changes a value, and any cell
can be regenerated from its (config, seed) pair alone.

The mask sweep trains once per seed and only varies the inference-time
background-mask fraction across rows, which is exactly what that ablation
measures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict, config_to_dict
from .data import Dataset
from .errors import ValidationError
from .evaluation import map_report
from .inference import predict_dataset
from .training import ModelState, fit

GRID_NAMES = ("table4", "lambda-levels", "class-emb", "mask-bkg", "baselines")
DEFAULT_SEEDS = (1, 2, 3, 4, 5)
MASK_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class AblationRow:
    """One grid row: a config delta and an optional inference-mask override."""

    name: str
    delta: dict[str, object] = field(default_factory=dict)
    eval_mask_fraction: float | None = None


@dataclass
class AblationGrid:
    name: str
    rows: list[AblationRow]
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    out_dir: str | None = None
    shared_training: bool = False
    # shared_training: one fit per seed, rows differ only at inference

    def __post_init__(self) -> None:
        if not self.rows:
            raise ValidationError("grid needs at least one row")
        if not self.seeds:
            raise ValidationError("grid needs at least one seed")
        names = [r.name for r in self.rows]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate row names in grid {self.name!r}")
        if self.shared_training and any(r.delta for r in self.rows):
            raise ValidationError("shared-training grids cannot carry config deltas")


def apply_delta(cfg: RunConfig, delta: dict[str, object]) -> RunConfig:
    """New config with dotted-key overrides applied; must stay valid."""
    d = config_to_dict(cfg)
    for key, value in delta.items():
        section, _, name = key.partition(".")
        if not name or section not in d:
            raise ValidationError(
                f"delta key {key!r} must look like 'section.field' with section "
                f"in {sorted(d)}"
            )
        d[section][name] = value
    return config_from_dict(d)


def _flag_rows(combos: list[tuple[str, bool, bool, bool]]) -> list[AblationRow]:
    rows = []
    for name, local, glob, bkg in combos:
        rows.append(AblationRow(name=name, delta={
            "train.loss_local": local,
            "train.loss_global": glob,
            "train.loss_bkg": bkg,
            "train.loss_mstn": False,
        }))
    return rows


def named_grid(name: str, cfg: RunConfig,
               seeds: tuple[int, ...] = DEFAULT_SEEDS) -> AblationGrid:
    """Build one of the predefined grids against a base config."""
    levels = cfg.model.levels
    if name == "table4":
        rows = _flag_rows([
            ("none", False, False, False),
            ("global", False, True, False),
            ("bkg", False, False, True),
            ("global+bkg", False, True, True),
            ("local", True, False, False),
            ("local+global", True, True, False),
            ("local+bkg", True, False, True),
        ])
        return AblationGrid(name=name, rows=rows, seeds=seeds)
    if name == "lambda-levels":
        k = min(3, levels)
        first = tuple(1.0 if l < k else 0.0 for l in range(levels))
        last = tuple(1.0 if l >= levels - k else 0.0 for l in range(levels))
        rows = [
            AblationRow("configured", {}),
            AblationRow("all_levs_1", {"train.level_weights": (1.0,) * levels}),
            AblationRow("first_3_levs_1", {"train.level_weights": first}),
            AblationRow("last_3_levs_1", {"train.level_weights": last}),
        ]
        return AblationGrid(name=name, rows=rows, seeds=seeds)
    if name == "class-emb":
        rows = [
            AblationRow(mode, {"model.conditioning": mode})
            for mode in ("learnable", "one_hot", "random_fixed", "sinusoidal")
        ]
        return AblationGrid(name=name, rows=rows, seeds=seeds)
    if name == "mask-bkg":
        rows = [
            AblationRow(f"mask_{int(round(100 * p))}", {}, eval_mask_fraction=p)
            for p in MASK_FRACTIONS
        ]
        return AblationGrid(name=name, rows=rows, seeds=seeds, shared_training=True)
    if name == "baselines":
        rows = [
            AblationRow("source_only", {
                "train.loss_local": False, "train.loss_global": False,
                "train.loss_bkg": False, "train.loss_mstn": False,
            }),
            AblationRow("dann", {
                "train.loss_local": False, "train.loss_global": True,
                "train.loss_bkg": False, "train.loss_mstn": False,
            }),
            AblationRow("mstn", {
                "train.loss_local": False, "train.loss_global": False,
                "train.loss_bkg": False, "train.loss_mstn": True,
            }),
            AblationRow("sada", {
                "train.loss_local": True, "train.loss_global": False,
                "train.loss_bkg": True, "train.loss_mstn": False,
            }),
        ]
        return AblationGrid(name=name, rows=rows, seeds=seeds)
    raise ValidationError(f"unknown grid {name!r}; valid names: {', '.join(GRID_NAMES)}")


@dataclass
class GridDatasets:
    source_train: Dataset
    target_train: Dataset
    source_val: Dataset
    target_val: Dataset


@dataclass
class GridResult:
    grid_name: str
    row_names: list[str]
    seeds: tuple[int, ...]
    cells: dict[tuple[str, int], float]

    def row_values(self, row: str) -> list[float]:
        if row not in self.row_names:
            raise ValidationError(f"row {row!r} not in grid {self.grid_name!r}")
        return [self.cells[(row, s)] for s in self.seeds]

    def row_mean(self, row: str) -> float:
        return float(np.mean(self.row_values(row)))

    def row_std(self, row: str) -> float:
        vals = self.row_values(row)
        return float(np.std(vals)) if len(vals) > 1 else 0.0


def _target_map(state: ModelState, dataset: Dataset, cfg: RunConfig,
                mask_fraction: float, mask_seed: int) -> float:
    model = state.ema_model()
    preds = predict_dataset(model, dataset.records, cfg.data.t_max, cfg.nms,
                            cfg.anchors.center_radius_strides,
                            cfg.anchors.base_range_strides,
                            mask_fraction=mask_fraction, mask_seed=mask_seed)
    gts = {rec.video_id: rec.segments for rec in dataset.records}
    return map_report(preds, gts, dataset.class_count, cfg.eval).avg_map


def run_grid(grid: AblationGrid, cfg: RunConfig, data: GridDatasets,
             progress=None) -> GridResult:
    """Train/evaluate every (row, seed) cell; returns the filled table."""
    cells: dict[tuple[str, int], float] = {}
    if grid.shared_training:
        for seed in grid.seeds:
            run_cfg = apply_delta(cfg, {"train.seed": seed})
            state, _ = fit(run_cfg, data.source_train, data.target_train,
                           data.source_val, data.target_val)
            for row in grid.rows:
                frac = row.eval_mask_fraction or 0.0
                cells[(row.name, seed)] = _target_map(
                    state, data.target_val, run_cfg, frac, seed)
                if progress:
                    progress(f"{grid.name}/{row.name} seed={seed}: "
                             f"{cells[(row.name, seed)]:.4f}")
    else:
        for row in grid.rows:
            for seed in grid.seeds:
                delta = dict(row.delta)
                delta["train.seed"] = seed
                run_cfg = apply_delta(cfg, delta)
                state, _ = fit(run_cfg, data.source_train, data.target_train,
                               data.source_val, data.target_val)
                frac = row.eval_mask_fraction or 0.0
                cells[(row.name, seed)] = _target_map(
                    state, data.target_val, run_cfg, frac, seed)
                if progress:
                    progress(f"{grid.name}/{row.name} seed={seed}: "
                             f"{cells[(row.name, seed)]:.4f}")
    return GridResult(grid_name=grid.name, row_names=[r.name for r in grid.rows],
                      seeds=grid.seeds, cells=cells)


@dataclass
class RowComparison:
    row_a: str
    row_b: str
    mean_gap: float      # mean(a) - mean(b)
    wins: int            # seeds where a > b
    ties: int
    losses: int


def compare_rows(result: GridResult, row_a: str, row_b: str) -> RowComparison:
    va = result.row_values(row_a)
    vb = result.row_values(row_b)
    wins = sum(1 for a, b in zip(va, vb) if a > b)
    ties = sum(1 for a, b in zip(va, vb) if a == b)
    return RowComparison(row_a=row_a, row_b=row_b,
                         mean_gap=float(np.mean(va) - np.mean(vb)),
                         wins=wins, ties=ties, losses=len(va) - wins - ties)


def results_to_csv(result: GridResult) -> str:
    lines = ["row,seed,map"]
    for row in result.row_names:
        for seed in result.seeds:
            lines.append(f"{row},{seed},{result.cells[(row, seed)]:.6f}")
    return "\n".join(lines) + "\n"


def read_results_csv(path) -> GridResult:
    rows: list[str] = []
    seeds: list[int] = []
    cells: dict[tuple[str, int], float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "row,seed,map":
            raise ValidationError(f"{path}: not a grid results file")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, seed_s, map_s = line.split(",")
            seed = int(seed_s)
            if name not in rows:
                rows.append(name)
            if seed not in seeds:
                seeds.append(seed)
            cells[(name, seed)] = float(map_s)
    for row in rows:
        for seed in seeds:
            if (row, seed) not in cells:
                raise ValidationError(f"{path}: missing cell ({row}, {seed})")
    return GridResult(grid_name="", row_names=rows, seeds=tuple(seeds), cells=cells)


def render_table(result: GridResult) -> str:
    """Plain-text summary table: one row per config, mean +/- std, cells."""
    name_w = max(len("row"), max(len(r) for r in result.row_names))
    header = (f"{'row':<{name_w}}  {'mean':>8}  {'std':>7}  "
              + "  ".join(f"s{seed:>5}" for seed in result.seeds))
    lines = [f"grid: {result.grid_name}", header, "-" * len(header)]
    for row in result.row_names:
        vals = result.row_values(row)
        cells = "  ".join(f"{v:6.2f}" for v in (100 * np.asarray(vals)))
        lines.append(f"{row:<{name_w}}  {100 * result.row_mean(row):8.2f}  "
                     f"{100 * result.row_std(row):7.2f}  {cells}")
    return "\n".join(lines) + "\n"


def write_grid_outputs(result: GridResult, out_dir) -> tuple[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{result.grid_name}_results.csv"
    table_path = out / f"{result.grid_name}_table.txt"
    csv_path.write_text(results_to_csv(result), encoding="utf-8")
    table_path.write_text(render_table(result), encoding="utf-8")
    return str(csv_path), str(table_path)


def render_comparison(c: RowComparison) -> str:
    sign = "+" if c.mean_gap >= 0 else ""
    return (f"{c.row_a} vs {c.row_b}: mean gap {sign}{100 * c.mean_gap:.2f} "
            f"(wins {c.wins}, ties {c.ties}, losses {c.losses})")
