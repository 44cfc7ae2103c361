"""Desk-scale training toolkit with group-competition loss weighting.

Groups of training images are stitched into one composite, pushed through
the classifier without gradients, and each member's posterior at its true
label becomes a raw score.  Normalizing within the group gives competition
scores that map affinely to per-sample loss weights: positive slope boosts
group winners, negative slope boosts losers.
"""

from .analysis import (
    ClassScoreStats,
    CorrelationReport,
    FitLine,
    correlation_report,
    linear_correlation,
    ns_distribution,
)
from .cli import LAYOUT_AXIS, RHO_AXIS, SIGMA_AXIS, main, run_experiment, sweep
from .config import (
    DataSettings,
    ExperimentConfig,
    apply_overrides,
    parse_config,
    serialize_config,
)
from .data import (
    Dataset,
    DatasetRecipe,
    SamplerConfig,
    build_splits,
    class_sampling_probs,
    gen_synthetic,
    inject_label_noise,
    load_cifar_binary,
    load_idx,
    longtail_counts,
    save_idx,
)
from .errors import (
    AnalysisError,
    ConfigError,
    FormatError,
    NatselError,
    NumericError,
    ShapeError,
    TapeError,
    TrainingDiverged,
)
from .imageops import (
    STANDARD_LAYOUTS,
    GridLayout,
    Normalization,
    bilinear_resize,
    channel_normalize,
    stitch,
)
from .model import (
    Classifier,
    ClassifierConfig,
    ConvSpec,
    LossConfig,
    load_checkpoint,
    per_sample_loss,
    save_checkpoint,
    softmax,
)
from .nscore import (
    GroupSpec,
    NSResult,
    batch_ns_scores,
    group_ns_scores,
    params_hash,
    partition_groups,
)
from .seeds import derive_seed
from .tensor import GradTape, Tensor, backward, elementwise, matmul
from .trainer import (
    MetricsRecord,
    TrainConfig,
    duality_check,
    evaluate,
    sgd_momentum_step,
    train,
    train_erm,
    weighted_batch_loss,
)
from .weighting import WeightingConfig, compute_weights, weight_curve

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # tensor core
    "Tensor", "GradTape", "backward", "matmul", "elementwise",
    # model
    "Classifier", "ClassifierConfig", "ConvSpec", "LossConfig", "softmax",
    "per_sample_loss", "save_checkpoint", "load_checkpoint",
    # image ops
    "GridLayout", "Normalization", "STANDARD_LAYOUTS", "stitch",
    "bilinear_resize", "channel_normalize",
    # competition scoring
    "GroupSpec", "NSResult", "partition_groups", "group_ns_scores",
    "batch_ns_scores", "params_hash",
    # weighting
    "WeightingConfig", "compute_weights", "weight_curve",
    # data
    "Dataset", "DatasetRecipe", "SamplerConfig", "gen_synthetic",
    "build_splits", "longtail_counts", "inject_label_noise",
    "class_sampling_probs", "load_idx", "save_idx", "load_cifar_binary",
    # trainer
    "TrainConfig", "MetricsRecord", "train", "train_erm", "evaluate",
    "weighted_batch_loss", "sgd_momentum_step", "duality_check",
    # analysis
    "ClassScoreStats", "FitLine", "CorrelationReport", "ns_distribution",
    "linear_correlation", "correlation_report",
    # config + cli
    "ExperimentConfig", "DataSettings", "parse_config", "serialize_config",
    "apply_overrides", "run_experiment", "sweep", "main",
    "SIGMA_AXIS", "RHO_AXIS", "LAYOUT_AXIS",
    # seeds + errors
    "derive_seed", "NatselError", "ShapeError", "NumericError", "TapeError",
    "ConfigError", "FormatError", "AnalysisError", "TrainingDiverged",
]
