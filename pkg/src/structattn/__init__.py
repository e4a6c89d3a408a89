"""Low-rank structured attention over multi-scale features, from scratch.

A small dense-prediction stack built on float64 numpy arrays: an immutable
Tensor with a tape-based reverse-mode gradient engine, a mean-field
refinement block whose spatial/channel attention gates form a rank-limited
tensor, scalar-loop oracles for every fast path, synthetic depth /
segmentation / surface-normal tasks with their standard metrics, and a
config-driven experiment runner.
"""

__version__ = "1.0.0"

from .attention import (
    AttentionMap,
    AttentionVector,
    StructuredAttention,
    apply_gate,
    assemble,
)
from .autodiff import Tape, Variable, grad_check
from .errors import (
    CheckpointError,
    ConfigError,
    DomainError,
    GraphError,
    LibraryError,
    NonFiniteError,
    SerializationError,
    ShapeError,
    SizeCapError,
    TaskError,
    TrainingDiverged,
)
from .mean_field import (
    AttentionState,
    InferenceConfig,
    KernelBank,
    MultiScaleFeatures,
    energy_at_means,
    init_bank,
    kernel_field,
    message_pass,
    pairwise_kernel_table,
    refine_scale,
    update_channel_gate,
    update_hidden,
    update_spatial_gate,
)
from .frontend import (
    ModelSpec,
    OptimizerConfig,
    forward_multiscale,
    init_params,
    loss_cosine,
    loss_cross_entropy,
    loss_l2,
    parameter_count,
    predict,
    train_step,
)
from .tasks import (
    MetricReport,
    SyntheticSample,
    eval_depth,
    eval_normals,
    eval_seg,
    gen_task,
    logits_to_labels,
)
from .checkpoint import check_compatible, load_checkpoint, save_checkpoint
from .experiment import (
    ExperimentConfig,
    RunRecord,
    config_hash,
    config_with,
    flops_per_forward,
    parse_config,
    parse_config_text,
    run_ablation,
    run_experiment,
    run_rank_sweep,
    serialize_config,
)
from .oracle import matricization_rank
from .tensor import Shape, Tensor, conv2d, load_tensor, resize_bilinear, save_tensor

__all__ = [
    "AttentionMap",
    "AttentionState",
    "AttentionVector",
    "CheckpointError",
    "ConfigError",
    "DomainError",
    "ExperimentConfig",
    "GraphError",
    "InferenceConfig",
    "KernelBank",
    "LibraryError",
    "MetricReport",
    "ModelSpec",
    "MultiScaleFeatures",
    "NonFiniteError",
    "OptimizerConfig",
    "RunRecord",
    "SerializationError",
    "Shape",
    "ShapeError",
    "SizeCapError",
    "StructuredAttention",
    "SyntheticSample",
    "Tape",
    "TaskError",
    "Tensor",
    "TrainingDiverged",
    "Variable",
    "apply_gate",
    "assemble",
    "check_compatible",
    "config_hash",
    "config_with",
    "conv2d",
    "energy_at_means",
    "eval_depth",
    "eval_normals",
    "eval_seg",
    "flops_per_forward",
    "forward_multiscale",
    "gen_task",
    "grad_check",
    "init_bank",
    "init_params",
    "kernel_field",
    "load_checkpoint",
    "load_tensor",
    "logits_to_labels",
    "loss_cosine",
    "loss_cross_entropy",
    "loss_l2",
    "matricization_rank",
    "message_pass",
    "pairwise_kernel_table",
    "parameter_count",
    "parse_config",
    "parse_config_text",
    "predict",
    "refine_scale",
    "resize_bilinear",
    "run_ablation",
    "run_experiment",
    "run_rank_sweep",
    "save_checkpoint",
    "save_tensor",
    "serialize_config",
    "train_step",
    "update_channel_gate",
    "update_hidden",
    "update_spatial_gate",
]
