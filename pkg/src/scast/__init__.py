"""Subcategory-aware self-training laboratory.

A small, fully deterministic test bed for studying self-training under
domain shift on binary dense prediction. The package generates paired
synthetic pixel-grid domains, trains a two-layer dense predictor, discovers
latent subcategories by clustering its features, and runs multi-round
class-balanced pseudo-label self-training with an optional prediction
consistency filter.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, WorldConfig, from_dict, load_config, validate
from .errors import (
    BadMagicError,
    ConfigError,
    DiscoveryError,
    GenerationError,
    ScastError,
    ScheduleExhaustedError,
    TensorFormatError,
    TrainingDivergedError,
    TruncatedPayloadError,
    UndefinedLossError,
    UnknownDtypeError,
)
from .metrics import (
    DEFAULT_BINS,
    Histogram,
    clustering_ari,
    dense_prf,
    likelihood_metric,
    mean_entropy,
    pseudo_error_rate,
    region_prf_iou50,
    scope_mask,
    score_histogram,
)
from .model import (
    LOSS_BCE,
    LOSS_DICE,
    LossWeights,
    ModelParams,
    OptimConfig,
    allocate_sub_head,
    backward,
    forward,
    init_params,
    loss_bi,
    loss_sub,
    loss_target,
    pooled_backward,
    sgd_step,
    to_prediction_map,
    train_source,
)
from .pseudolabel import (
    CoRegConfig,
    CoRegReport,
    ThresholdSet,
    assign_pseudo_labels,
    compute_thresholds,
    coreg_distance,
    coreg_filter,
    coreg_filter_pooled,
)
from .rng import stream, tag64
from .selftrain import (
    MODES,
    AblationMode,
    RunResult,
    SelfTrainState,
    parse_mode,
    planned_iterations,
    run,
    run_round,
)
from .subcat import (
    ClusterParams,
    SubcategoryModel,
    assign_subcategory,
    dbscan,
    discover_subcategories,
    downsample_features,
    downsample_labels,
)
from .synthgen import (
    Domain,
    DomainSample,
    WorldSpec,
    bayes_posterior,
    default_world,
    generate_domain,
)
from .tensorio import read_tensor, write_tensor
from .types import IGNORE, LabelMask, PixelGrid, PredictionMap

__version__ = "0.1.0"

__all__ = [
    "IGNORE",
    "DEFAULT_BINS",
    "LOSS_BCE",
    "LOSS_DICE",
    "MODES",
    "AblationMode",
    "BadMagicError",
    "ClusterParams",
    "ConfigError",
    "CoRegConfig",
    "CoRegReport",
    "DiscoveryError",
    "Domain",
    "DomainSample",
    "GenerationError",
    "Histogram",
    "LabelMask",
    "LossWeights",
    "ModelParams",
    "OptimConfig",
    "PixelGrid",
    "PredictionMap",
    "RunConfig",
    "RunResult",
    "ScastError",
    "ScheduleExhaustedError",
    "SelfTrainState",
    "SubcategoryModel",
    "TensorFormatError",
    "ThresholdSet",
    "TrainingDivergedError",
    "TruncatedPayloadError",
    "UndefinedLossError",
    "UnknownDtypeError",
    "WorldConfig",
    "WorldSpec",
    "allocate_sub_head",
    "assign_pseudo_labels",
    "assign_subcategory",
    "backward",
    "bayes_posterior",
    "clustering_ari",
    "compute_thresholds",
    "coreg_distance",
    "coreg_filter",
    "coreg_filter_pooled",
    "dbscan",
    "default_world",
    "dense_prf",
    "discover_subcategories",
    "downsample_features",
    "downsample_labels",
    "forward",
    "from_dict",
    "generate_domain",
    "init_params",
    "likelihood_metric",
    "load_checkpoint",
    "load_config",
    "validate",
    "loss_bi",
    "loss_sub",
    "loss_target",
    "mean_entropy",
    "parse_mode",
    "planned_iterations",
    "pooled_backward",
    "pseudo_error_rate",
    "read_tensor",
    "region_prf_iou50",
    "run",
    "run_round",
    "save_checkpoint",
    "scope_mask",
    "score_histogram",
    "sgd_step",
    "stream",
    "tag64",
    "to_prediction_map",
    "train_source",
    "write_tensor",
]
