"""Early-exit branch training on frozen backbones with paced curricula."""

from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .curriculum import (DifficultyOrder, PacingConfig, Strategy, active_range,
                         default_pacing_grid, one_pass_bounds, order_for_strategy,
                         pacing_eval, sample_batch, saturation_batch, schedule_stream,
                         score_with_teacher, strategy_stream)
from .datasets import (Dataset, SplitSpec, Splits, generate_synthetic, load_cifar_binary,
                       load_text, save_text, split)
from .errors import (BranchwiseError, CheckpointError, ConfigError, DataError,
                     FrozenParameterError, ShapeError, StaleCacheError)
from .estimator import MultiExitClassifier, conv_backbone
from .multiexit import (BranchSpec, EpochMetrics, ExitPolicy, MultiExitModel,
                        attach_branches, backbone_activations, entropy, evaluate_exit,
                        exit_probabilities, infer_with_policy, predict_with_policy,
                        train_branch)

__version__ = "0.1.0"

__all__ = [
    "nn", "load_checkpoint", "save_checkpoint",
    "DifficultyOrder", "PacingConfig", "Strategy", "active_range", "default_pacing_grid",
    "one_pass_bounds", "order_for_strategy", "pacing_eval", "sample_batch",
    "saturation_batch", "schedule_stream", "score_with_teacher", "strategy_stream",
    "Dataset", "SplitSpec", "Splits", "generate_synthetic", "load_cifar_binary",
    "load_text", "save_text", "split",
    "BranchwiseError", "CheckpointError", "ConfigError", "DataError",
    "FrozenParameterError", "ShapeError", "StaleCacheError",
    "MultiExitClassifier", "conv_backbone",
    "BranchSpec", "EpochMetrics", "ExitPolicy", "MultiExitModel", "attach_branches",
    "backbone_activations", "entropy", "evaluate_exit", "exit_probabilities",
    "infer_with_policy", "predict_with_policy", "train_branch",
    "__version__",
]
