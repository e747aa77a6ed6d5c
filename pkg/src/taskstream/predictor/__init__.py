"""Task-level learners: configurable classifiers, trainer, metrics, FLOP model."""

from .config import (
    ArchSpec,
    LayerSpec,
    PredictorConfig,
    compute_batch_size,
    mlp_arch,
    small_conv_arch,
)
from .flops import FlopCounts, flop_estimate, forward_flops
from .metrics import average_precision, evaluate, extract_features, mean_average_precision
from .preprocessing import preprocess
from .schedules import cosine_warmup_lr, learning_rate, piecewise_warmup_lr
from .state import PredictorState, deserialize_state, serialize_state
from .training import TrainReport, multitask_train, train

__all__ = [
    "ArchSpec",
    "LayerSpec",
    "PredictorConfig",
    "compute_batch_size",
    "mlp_arch",
    "small_conv_arch",
    "FlopCounts",
    "flop_estimate",
    "forward_flops",
    "average_precision",
    "evaluate",
    "extract_features",
    "mean_average_precision",
    "preprocess",
    "cosine_warmup_lr",
    "learning_rate",
    "piecewise_warmup_lr",
    "PredictorState",
    "deserialize_state",
    "serialize_state",
    "TrainReport",
    "multitask_train",
    "train",
]
