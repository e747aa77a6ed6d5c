"""SGD training of task predictors, with optional auxiliary multitask losses.

One training run owns its parameter dict exclusively: the init state (when
given) is deep-copied, a fresh head is always created for the current task,
and the finished state is returned frozen inside the report. Randomness is
split into independent streams (init / batching / augmentation / auxiliary)
derived from the config seed, so a multitask run draws exactly the same
current-task batches as a plain run with the same seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, NonFiniteLossError, TrainingError
from ..streams import Task, TaskKind
from .config import PredictorConfig, compute_batch_size
from .flops import FlopCounts, flop_estimate
from .metrics import evaluate, sigmoid, softmax, stack_inputs, stack_labels
from .network import backward, forward, init_backbone, init_head, trainable_names
from .schedules import learning_rate
from .state import PredictorState

AUX_BATCH_SIZE = 64


@dataclass(frozen=True)
class TrainReport:
    """Outcome of one training run."""

    final_state: PredictorState
    val_error: float
    flops: int
    learning_curve: tuple[tuple[int, float], ...]
    wall_time: float


def smoothed_xent_grad(
    logits: np.ndarray, labels: np.ndarray, smoothing: float
) -> tuple[float, np.ndarray]:
    """Label-smoothed softmax cross-entropy; returns (mean loss, dlogits)."""
    n, c = logits.shape
    probs = softmax(logits)
    target = np.full_like(probs, smoothing / c)
    target[np.arange(n), labels] += 1.0 - smoothing
    log_probs = np.log(np.clip(probs, 1e-300, None))
    loss = float(-(target * log_probs).sum() / n)
    return loss, (probs - target) / n


def bce_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Per-class sigmoid binary cross-entropy; returns (mean loss, dlogits)."""
    n, c = logits.shape
    probs = sigmoid(logits)
    eps = 1e-12
    loss = float(
        -(labels * np.log(probs + eps) + (1 - labels) * np.log(1 - probs + eps)).sum()
        / (n * c)
    )
    return loss, (probs - labels) / (n * c)


def _loss_and_grad(
    logits: np.ndarray, labels: np.ndarray, kind: TaskKind, smoothing: float
) -> tuple[float, np.ndarray]:
    if kind is TaskKind.SINGLE_LABEL:
        return smoothed_xent_grad(logits, labels, smoothing)
    return bce_grad(logits, labels)


def _sample_batch(rng: np.random.Generator, n: int, batch: int) -> np.ndarray:
    return rng.choice(n, size=batch, replace=batch > n)


def _check_init_compat(init: PredictorState, config: PredictorConfig) -> None:
    if init.arch != config.arch:
        raise TrainingError(
            "init state architecture does not match the configured architecture"
        )
    if init.resolution != config.input_resolution:
        raise TrainingError(
            f"init state resolution {init.resolution} != configured "
            f"{config.input_resolution}"
        )


def train(
    task: Task,
    config: PredictorConfig,
    init: PredictorState | None = None,
) -> TrainReport:
    """Train a predictor for ``task``; see ``multitask_train`` for aux losses."""
    return multitask_train(task, (), 0.0, config, init)


def multitask_train(
    task: Task,
    aux_tasks: tuple[Task, ...] | list[Task],
    aux_weight: float,
    config: PredictorConfig,
    init: PredictorState | None = None,
) -> TrainReport:
    """Train on ``task`` while accumulating weighted gradients from aux tasks.

    Every step takes one current-task mini-batch (adaptive size) plus one
    64-example mini-batch per auxiliary task, scales the auxiliary losses by
    ``aux_weight``, and accumulates all gradients into a single update.
    Batch-norm running statistics only see current-task batches, and the
    auxiliary heads never participate in evaluation.
    """
    config.validate()
    if not task.train or not task.val:
        raise DataError(f"task {task.id}: train and val splits must be nonempty")
    for aux in aux_tasks:
        if not aux.train:
            raise DataError(f"auxiliary task {aux.id}: train split unavailable")

    started = time.monotonic()
    root = np.random.SeedSequence(config.seed)
    init_seq, batch_seq, augment_seq, aux_seq = root.spawn(4)
    init_rng = np.random.default_rng(init_seq)
    batch_rng = np.random.default_rng(batch_seq)
    augment_rng = np.random.default_rng(augment_seq)
    aux_rng = np.random.default_rng(aux_seq)

    if init is not None:
        _check_init_compat(init, config)
        params = {k: v.copy() for k, v in init.params.items()}
    else:
        params = init_backbone(config.arch, config.input_resolution, init_rng)
    feature_dim = config.arch.feature_dim
    heads = {task.id: init_head(feature_dim, task.num_classes, init_rng)}
    for aux in aux_tasks:
        if aux.id in heads:
            raise DataError(f"duplicate auxiliary task id {aux.id!r}")
        heads[aux.id] = init_head(feature_dim, aux.num_classes, aux_rng)

    batch = compute_batch_size(len(task.train), config.max_batch, config.batch_fraction)
    velocity = {name: np.zeros_like(params[name]) for name in trainable_names(params)}
    head_velocity = {
        tid: {k: np.zeros_like(v) for k, v in head.items()} for tid, head in heads.items()
    }

    total_flops = flop_estimate(
        config.arch,
        config.input_resolution,
        task.num_classes,
        FlopCounts(train_steps=config.num_updates, batch=batch),
    )
    for aux in aux_tasks:
        total_flops += flop_estimate(
            config.arch,
            config.input_resolution,
            aux.num_classes,
            FlopCounts(train_steps=config.num_updates, batch=AUX_BATCH_SIZE),
        )
    eval_examples_seen = 0

    curve: list[tuple[int, float]] = []
    mu = config.momentum
    wd = config.weight_decay

    def apply_update(target, grads, vel, lr):
        for name, grad in grads.items():
            g = grad + wd * target[name]
            vel[name] = mu * vel[name] + g
            target[name] -= lr * (g + mu * vel[name])

    def current_state() -> PredictorState:
        return PredictorState(
            arch=config.arch,
            resolution=config.input_resolution,
            params={k: v.copy() for k, v in params.items()},
            heads={t: {k: v.copy() for k, v in h.items()} for t, h in heads.items()},
        )

    for step in range(config.num_updates):
        lr = learning_rate(
            config.schedule,
            step,
            config.num_updates,
            config.learning_rate,
            config.warmup_fraction,
            config.lr_floor,
        )
        idx = _sample_batch(batch_rng, len(task.train), batch)
        chunk = [task.train[i] for i in idx]
        x = stack_inputs(chunk, config, mode="train", rng=augment_rng)
        labels = stack_labels(chunk, task.kind, task.num_classes)
        logits, features, caches = forward(
            config.arch,
            params,
            heads[task.id],
            x,
            train=True,
            update_stats=True,
            want_cache=True,
        )
        loss, dlogits = _loss_and_grad(logits, labels, task.kind, config.label_smoothing)
        if not np.isfinite(loss):
            raise NonFiniteLossError(
                f"non-finite loss at step {step} "
                f"(lr={config.learning_rate}, smoothing={config.label_smoothing})",
                step=step,
                flops=_executed_flops(config, task, aux_tasks, batch, step, eval_examples_seen),
            )
        grads, head_grads = backward(
            config.arch, params, heads[task.id], caches, features, dlogits
        )

        for aux in aux_tasks:
            aux_idx = _sample_batch(aux_rng, len(aux.train), AUX_BATCH_SIZE)
            aux_chunk = [aux.train[i] for i in aux_idx]
            ax = stack_inputs(aux_chunk, config, mode="train", rng=aux_rng)
            aux_labels = stack_labels(aux_chunk, aux.kind, aux.num_classes)
            aux_logits, aux_features, aux_caches = forward(
                config.arch,
                params,
                heads[aux.id],
                ax,
                train=True,
                update_stats=False,
                want_cache=True,
            )
            aux_loss, aux_dlogits = _loss_and_grad(
                aux_logits, aux_labels, aux.kind, config.label_smoothing
            )
            if not np.isfinite(aux_loss):
                raise NonFiniteLossError(
                    f"non-finite auxiliary loss at step {step} (task {aux.id})",
                    step=step,
                    flops=_executed_flops(
                        config, task, aux_tasks, batch, step, eval_examples_seen
                    ),
                )
            aux_grads, aux_head_grads = backward(
                config.arch, params, heads[aux.id], aux_caches, aux_features, aux_dlogits
            )
            for name, grad in aux_grads.items():
                grads[name] = grads[name] + aux_weight * grad
            apply_update(heads[aux.id], {k: aux_weight * v for k, v in aux_head_grads.items()},
                         head_velocity[aux.id], lr)

        apply_update(params, grads, velocity, lr)
        apply_update(heads[task.id], head_grads, head_velocity[task.id], lr)

        done = step + 1
        if done % config.eval_schedule == 0 or done == config.num_updates:
            error = evaluate(current_state(), task.val, task.kind, task.id, config)
            eval_examples_seen += len(task.val)
            curve.append((done, 1.0 - error))

    total_flops += eval_examples_seen * _eval_example_flops(config, task.num_classes)

    final_state = current_state()
    if curve:
        val_error = 1.0 - curve[-1][1]
    else:
        val_error = evaluate(final_state, task.val, task.kind, task.id, config)
    return TrainReport(
        final_state=final_state,
        val_error=val_error,
        flops=total_flops,
        learning_curve=tuple(curve),
        wall_time=time.monotonic() - started,
    )


def _eval_example_flops(config: PredictorConfig, num_classes: int) -> int:
    return flop_estimate(
        config.arch, config.input_resolution, num_classes, FlopCounts(eval_examples=1)
    )


def _executed_flops(
    config: PredictorConfig,
    task: Task,
    aux_tasks,
    batch: int,
    steps_done: int,
    eval_examples_seen: int,
) -> int:
    total = flop_estimate(
        config.arch,
        config.input_resolution,
        task.num_classes,
        FlopCounts(train_steps=steps_done, batch=batch),
    )
    for aux in aux_tasks:
        total += flop_estimate(
            config.arch,
            config.input_resolution,
            aux.num_classes,
            FlopCounts(train_steps=steps_done, batch=AUX_BATCH_SIZE),
        )
    return total + eval_examples_seen * _eval_example_flops(config, task.num_classes)
