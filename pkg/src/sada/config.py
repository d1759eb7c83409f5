"""Run configuration: validated sections plus a small TOML-subset codec.

The config file is the single home for every tunable hyperparameter.
Sections: [model], [data], [train], [anchors], [nms], [eval]. Unknown
sections or keys are rejected rather than ignored.

The built-in parser covers the TOML subset these files need: ``[section]``
headers, ``key = value`` pairs with string/integer/float/boolean values,
flat arrays, and ``#`` comments. It is not a general TOML implementation
(no nested tables, dates, or multi-line strings); the runtime environment
offers no TOML library for this Python version, so the subset is shipped
in-repo.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .evaluation import EvalConfig
from .inference import NmsConfig
from .model import ModelConfig


@dataclass
class DataConfig:
    t_max: int = 2304

    def __post_init__(self) -> None:
        if self.t_max < 1:
            raise ValidationError(f"t_max must be >= 1, got {self.t_max}")


@dataclass
class AnchorConfig:
    center_radius_strides: float = 1.5
    base_range_strides: float = 2.0

    def __post_init__(self) -> None:
        if self.center_radius_strides <= 0 or self.base_range_strides <= 0:
            raise ValidationError("anchor radius and base range must be positive")


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-4
    weight_decay: float = 0.05
    warmup_epochs: int = 5
    per_domain_batch: int = 2
    ema_decay: float = 0.999
    task_weight: float = 1.0
    sada_weight: float = 1.0
    cls_weight: float = 1.0
    loc_weight: float = 1.0
    level_weights: tuple[float, ...] | None = None
    pseudo_label_threshold: float = 0.6
    loss_local: bool = True
    loss_global: bool = False
    loss_bkg: bool = True
    loss_mstn: bool = False
    mstn_decay: float = 0.9
    seed: int = 1
    early_stop_patience: int = 10
    eval_map_every: int = 0
    mask_background_fraction: float = 0.0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.per_domain_batch < 1:
            raise ValidationError("epochs and per_domain_batch must be >= 1")
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.warmup_epochs < 0 or self.warmup_epochs > self.epochs:
            raise ValidationError(
                f"warmup_epochs must be in [0, epochs], got {self.warmup_epochs}"
            )
        if not (0.0 <= self.ema_decay < 1.0):
            raise ValidationError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        for name in ("weight_decay", "task_weight", "sada_weight", "cls_weight",
                     "loc_weight"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        if not (0.0 < self.pseudo_label_threshold < 1.0):
            raise ValidationError("pseudo_label_threshold must be in (0, 1)")
        if not (0.0 <= self.mstn_decay <= 1.0):
            raise ValidationError("mstn_decay must be in [0, 1]")
        if not (0.0 <= self.mask_background_fraction <= 1.0):
            raise ValidationError("mask_background_fraction must be in [0, 1]")
        if self.early_stop_patience < 0 or self.eval_map_every < 0:
            raise ValidationError("patience and eval_map_every must be >= 0")
        if self.level_weights is not None:
            lw = tuple(float(v) for v in self.level_weights)
            if any(v < 0 for v in lw):
                raise ValidationError("level_weights must be nonnegative")
            self.level_weights = lw

    def resolved_level_weights(self, levels: int) -> tuple[float, ...]:
        if self.level_weights is None:
            return (1.0,) * levels
        if len(self.level_weights) != levels:
            raise ValidationError(
                f"{len(self.level_weights)} level weights for {levels} levels"
            )
        return self.level_weights

    @property
    def alignment_enabled(self) -> bool:
        flags = self.loss_local or self.loss_global or self.loss_bkg or self.loss_mstn
        return flags and self.sada_weight > 0.0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    nms: NmsConfig = field(default_factory=NmsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        self.train.resolved_level_weights(self.model.levels)
        div = 2 ** (self.model.levels - 1)
        if self.data.t_max % div != 0:
            raise ValidationError(
                f"t_max {self.data.t_max} not divisible by 2^(L-1) = {div}"
            )
        return self


_SECTIONS = {
    "model": ModelConfig,
    "data": DataConfig,
    "train": TrainConfig,
    "anchors": AnchorConfig,
    "nms": NmsConfig,
    "eval": EvalConfig,
}


def _parse_scalar(token: str, where: str):
    token = token.strip()
    if not token:
        raise ValidationError(f"{where}: empty value")
    if token.startswith('"') and token.endswith('"') and len(token) >= 2:
        return token[1:-1]
    if token == "true":
        return True
    if token == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        raise ValidationError(f"{where}: cannot parse value {token!r}") from None


def _strip_comment(line: str) -> str:
    out = []
    in_str = False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        if ch == "#" and not in_str:
            break
        out.append(ch)
    return "".join(out)


def parse_toml_subset(text: str) -> dict[str, dict]:
    sections: dict[str, dict] = {}
    current: dict | None = None
    current_name = ""
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"line {line_no}"
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ValidationError(f"{where}: empty section name")
            if name in sections:
                raise ValidationError(f"{where}: duplicate section [{name}]")
            current = sections.setdefault(name, {})
            current_name = name
            continue
        if "=" not in line:
            raise ValidationError(f"{where}: expected key = value, got {line!r}")
        if current is None:
            raise ValidationError(f"{where}: key outside any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ValidationError(f"{where}: empty key")
        if key in current:
            raise ValidationError(f"{where}: duplicate key {key!r} in [{current_name}]")
        if value.startswith("[") and value.endswith("]"):
            inner = value[1:-1].strip()
            items = [] if not inner else [
                _parse_scalar(tok, where) for tok in inner.split(",") if tok.strip()
            ]
            current[key] = items
        else:
            current[key] = _parse_scalar(value, where)
    return sections


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_to_dict(cfg: RunConfig) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for name, sub_cls in _SECTIONS.items():
        sub = getattr(cfg, name)
        row = {}
        for f in dataclasses.fields(sub_cls):
            v = getattr(sub, f.name)
            if v is None:
                continue
            row[f.name] = list(v) if isinstance(v, tuple) else v
        out[name] = row
    return out


def to_toml(cfg: RunConfig) -> str:
    lines = []
    for name, row in config_to_dict(cfg).items():
        lines.append(f"[{name}]")
        for key, v in row.items():
            lines.append(f"{key} = {_format_value(v)}")
        lines.append("")
    return "\n".join(lines)


def _coerce(sub_cls, key: str, value, section: str):
    f = {x.name: x for x in dataclasses.fields(sub_cls)}.get(key)
    if f is None:
        valid = ", ".join(sorted(x.name for x in dataclasses.fields(sub_cls)))
        raise ValidationError(f"unknown key {key!r} in [{section}]; valid: {valid}")
    if isinstance(value, bool):
        return value
    if isinstance(value, int) and f.type in ("float", float):
        return float(value)
    if isinstance(value, list):
        return tuple(value)
    return value


def config_from_dict(d: dict[str, dict]) -> RunConfig:
    kwargs = {}
    for section, row in d.items():
        sub_cls = _SECTIONS.get(section)
        if sub_cls is None:
            raise ValidationError(
                f"unknown section [{section}]; valid: {', '.join(sorted(_SECTIONS))}"
            )
        if not isinstance(row, dict):
            raise ValidationError(f"section [{section}] must hold key/value pairs")
        sub_kwargs = {k: _coerce(sub_cls, k, v, section) for k, v in row.items()}
        try:
            kwargs[section] = sub_cls(**sub_kwargs)
        except TypeError as exc:
            raise ValidationError(f"bad [{section}] config: {exc}") from exc
    return RunConfig(**kwargs).validate()


def load_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    return config_from_dict(parse_toml_subset(text))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(to_toml(cfg), encoding="utf-8")
