"""Few-shot classification on tabular tasks of any width.

A model has three blocks: a per-column piecewise linear calibration bank
(the only part fit per task), a distribution embedding of the support set,
and a Deep Sets classifier that sums a shared network over covariate
index tuples, so one set of shared weights serves tasks of any width.
"""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import Task, TaskFormatError, load_task_csv, save_task_csv, split_support_query
from .experiments import SimulationSpec, evaluate, load_manifest, method_means, oracle_band_suite
from .metrics import accuracy, auc, mean_stderr
from .model import DenModel, ModelConfig, build_model, den_forward, param_count, predict_labels
from .simulate import (
    DistortionSpec,
    ScorerSpec,
    apply_heterogeneity,
    bayes_auc_oracle,
    simulate_suite,
    simulate_task_family,
)
from .trainer import TrainConfig, direct_baseline_linear, direct_baseline_mlp, finetune, pretrain

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "DenModel",
    "DistortionSpec",
    "ModelConfig",
    "ScorerSpec",
    "SimulationSpec",
    "Task",
    "TaskFormatError",
    "TrainConfig",
    "accuracy",
    "apply_heterogeneity",
    "auc",
    "bayes_auc_oracle",
    "build_model",
    "den_forward",
    "direct_baseline_linear",
    "direct_baseline_mlp",
    "evaluate",
    "finetune",
    "load_checkpoint",
    "load_manifest",
    "load_task_csv",
    "mean_stderr",
    "method_means",
    "oracle_band_suite",
    "param_count",
    "predict_labels",
    "pretrain",
    "save_checkpoint",
    "save_task_csv",
    "simulate_suite",
    "simulate_task_family",
    "split_support_query",
]
