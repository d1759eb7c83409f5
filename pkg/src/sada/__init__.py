"""Semantic adversarial domain adaptation for sparse temporal detection.

A numpy implementation of an anchor-based temporal action detector whose
source-trained features are aligned to an unlabeled target domain through
class-conditional adversarial losses. Ships with a synthetic paired
benchmark, training/inference/evaluation pipelines, and scripted ablation
grids; the ``sada`` console command ties them together.
"""

from .ablate import (
    AblationGrid,
    AblationRow,
    GridDatasets,
    GridResult,
    compare_rows,
    named_grid,
    run_grid,
)
from .alignment import (
    AnchorGroups,
    CentroidState,
    ClassConditioning,
    DomainDiscriminator,
    bkg_align_loss,
    global_dann_loss,
    grl_backward,
    grl_forward,
    group_anchors,
    local_align_loss,
    mstn_centroid_loss,
    pseudo_labels,
    sada_loss,
)
from .anchors import (
    AnchorGrid,
    LevelMatch,
    build_grids,
    decode_offsets,
    encode_offsets,
    match,
    regression_ranges,
)
from .config import (
    AnchorConfig,
    DataConfig,
    RunConfig,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)
from .data import (
    Dataset,
    FeatureSequence,
    SegmentAnnotation,
    VideoRecord,
    build_batch,
    eval_windows,
    interleave_domains,
    pad_or_crop,
    read_annotations,
    read_feature_file,
    write_annotations,
    write_feature_file,
)
from .errors import (
    CheckpointError,
    FormatError,
    SadaError,
    TrainingError,
    ValidationError,
)
from .evaluation import EvalConfig, EvalReport, average_precision, map_report, tiou
from .heads import TaskLossWeights, focal_loss, localization_loss, task_loss
from .inference import (
    NmsConfig,
    ScoredSegment,
    mask_background,
    predict_dataset,
    predict_record,
    read_predictions,
    soft_nms,
    write_predictions,
)
from .model import Model, ModelConfig, build_model
from .pyramid import FeaturePyramid, PyramidConfig
from .synthbench import (
    BenchSpec,
    ShiftSpec,
    generate_benchmark,
    read_benchmark_dir,
    summarize,
    write_benchmark_dir,
)
from .training import (
    AdamW,
    ModelState,
    create_state,
    ema_update,
    fit,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    total_loss,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "AblationGrid", "AblationRow", "GridDatasets", "GridResult", "compare_rows",
    "named_grid", "run_grid",
    "AnchorGroups", "CentroidState", "ClassConditioning", "DomainDiscriminator",
    "bkg_align_loss", "global_dann_loss", "grl_backward", "grl_forward",
    "group_anchors", "local_align_loss", "mstn_centroid_loss", "pseudo_labels",
    "sada_loss",
    "AnchorGrid", "LevelMatch", "build_grids", "decode_offsets", "encode_offsets",
    "match", "regression_ranges",
    "AnchorConfig", "DataConfig", "RunConfig", "TrainConfig", "config_from_dict",
    "config_to_dict", "load_config", "save_config",
    "Dataset", "FeatureSequence", "SegmentAnnotation", "VideoRecord", "build_batch",
    "eval_windows", "interleave_domains", "pad_or_crop", "read_annotations",
    "read_feature_file", "write_annotations", "write_feature_file",
    "CheckpointError", "FormatError", "SadaError", "TrainingError", "ValidationError",
    "EvalConfig", "EvalReport", "average_precision", "map_report", "tiou",
    "TaskLossWeights", "focal_loss", "localization_loss", "task_loss",
    "NmsConfig", "ScoredSegment", "mask_background", "predict_dataset",
    "predict_record", "read_predictions", "soft_nms", "write_predictions",
    "Model", "ModelConfig", "build_model",
    "FeaturePyramid", "PyramidConfig",
    "BenchSpec", "ShiftSpec", "generate_benchmark", "read_benchmark_dir",
    "summarize", "write_benchmark_dir",
    "AdamW", "ModelState", "create_state", "ema_update", "fit", "load_checkpoint",
    "lr_at", "save_checkpoint", "total_loss", "train_step",
    "__version__",
]
