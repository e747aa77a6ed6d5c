"""taskstream: a compute-aware evaluation harness for never-ending learning.

Builds ordered task streams (from manifests, generators or class partitions),
drives meta-train/meta-test passes with strict causality, runs pluggable
transfer strategies with per-task hyper-parameter search, accounts every
training FLOP analytically, and turns record logs into Pareto fronts, regret
curves, forward-transfer scores and transfer matrices.
"""

from .analysis import (
    ParetoPoint,
    TransferMatrix,
    aggregate,
    forward_transfer,
    fwt_by_task,
    pareto_front,
    regret_curve,
    transfer_matrix,
)
from .errors import (
    CausalityViolation,
    ConfigError,
    DataError,
    TaskStreamError,
    TrainingError,
)
from .hpo import SearchSpace, Trial, best_trial, bhpo, build_space, random_search
from .manifest import load_stream
from .metalearner import (
    Budgets,
    MetaLearnerState,
    Strategy,
    StrategyFamily,
    ensemble_predict,
    relatedness_scores,
    select_init,
    train_task,
)
from .predictor import (
    ArchSpec,
    PredictorConfig,
    PredictorState,
    TrainReport,
    compute_batch_size,
    evaluate,
    extract_features,
    flop_estimate,
    mlp_arch,
    multitask_train,
    preprocess,
    small_conv_arch,
    train,
)
from .protocol import (
    CausalView,
    RunRecord,
    StrategyLearner,
    StreamLearner,
    run_meta_test,
    run_meta_train,
)
from .streams import (
    Example,
    Stream,
    StreamVariant,
    Task,
    TaskKind,
    apply_variant,
    make_class_partition_stream,
    split_boundary,
)
from .synthetic import RelatednessEdge, SyntheticStreamSpec, make_synthetic_stream

__version__ = "0.1.0"
