"""Task-level evaluation: error = 1 - accuracy (single-label) or 1 - mAP.

Average precision is the continuous variant: precision averaged over the
positive hits of the full score ranking, ties broken by item index so the
result is deterministic. Classes without positives are skipped by the mean.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..streams import Example, TaskKind
from .config import PredictorConfig
from .network import forward_features, head_logits
from .preprocessing import preprocess
from .state import PredictorState

EVAL_CHUNK = 512


def softmax(logits: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", over="ignore"):
        shifted = logits - logits.max(axis=-1, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=-1, keepdims=True)


def sigmoid(logits: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-logits))


def average_precision(scores: np.ndarray, relevant: np.ndarray) -> float:
    """Continuous AP of one ranking; ``relevant`` is a 0/1 vector."""
    scores = np.asarray(scores, dtype=np.float64)
    relevant = np.asarray(relevant)
    positives = int(relevant.sum())
    if positives == 0:
        raise DataError("average precision undefined without positives")
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if relevant[idx]:
            hits += 1
            total += hits / rank
    return total / positives


def mean_average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """mAP over classes with at least one positive; scores/labels are (N, C)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DataError(f"score shape {scores.shape} != label shape {labels.shape}")
    per_class = []
    for c in range(scores.shape[1]):
        if labels[:, c].sum() > 0:
            per_class.append(average_precision(scores[:, c], labels[:, c]))
    if not per_class:
        raise DataError("mAP undefined: no class has positives")
    return float(np.mean(per_class))


def stack_inputs(
    examples: tuple[Example, ...] | list[Example],
    config: PredictorConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Assemble a batch, preprocessing images per the config."""
    if config.arch.input_kind == "vector":
        return np.stack([np.asarray(ex.input, dtype=np.float64) for ex in examples])
    arrays = [
        preprocess(
            ex.input,
            mode,
            config.input_resolution,
            rng,
            random_crop=config.random_crop,
            horizontal_flip=config.horizontal_flip,
        )
        for ex in examples
    ]
    return np.stack(arrays)


def stack_labels(examples, kind: TaskKind, num_classes: int) -> np.ndarray:
    if kind is TaskKind.SINGLE_LABEL:
        return np.asarray([int(ex.label) for ex in examples], dtype=np.int64)
    return np.stack([np.asarray(ex.label, dtype=np.float64) for ex in examples])


def predict_scores(
    state: PredictorState, examples, task_id: str, config: PredictorConfig
) -> np.ndarray:
    """Model scores on a split: softmax probabilities or per-class sigmoids."""
    head = state.head_for(task_id)
    outputs = []
    for start in range(0, len(examples), EVAL_CHUNK):
        chunk = examples[start : start + EVAL_CHUNK]
        x = stack_inputs(chunk, config, mode="eval")
        features, _ = forward_features(state.arch, state.params, x)
        outputs.append(head_logits(head, features))
    return np.concatenate(outputs, axis=0)


def error_from_scores(scores: np.ndarray, labels: np.ndarray, kind: TaskKind) -> float:
    if kind is TaskKind.SINGLE_LABEL:
        predictions = scores.argmax(axis=1)
        return float(1.0 - (predictions == labels).mean())
    return float(1.0 - mean_average_precision(scores, labels))


def evaluate(
    state: PredictorState,
    examples,
    kind: TaskKind,
    task_id: str,
    config: PredictorConfig,
) -> float:
    """Task error on a split, in [0, 1]."""
    if not len(examples):
        raise DataError("cannot evaluate on an empty split")
    scores = predict_scores(state, examples, task_id, config)
    num_classes = scores.shape[1]
    labels = stack_labels(examples, kind, num_classes)
    return error_from_scores(scores, labels, kind)


def extract_features(
    state: PredictorState, inputs: np.ndarray, chunk: int = EVAL_CHUNK
) -> np.ndarray:
    """Penultimate-layer activations; deterministic, no parameter mutation."""
    outputs = []
    for start in range(0, len(inputs), chunk):
        feats, _ = forward_features(state.arch, state.params, inputs[start : start + chunk])
        outputs.append(feats)
    return np.concatenate(outputs, axis=0)
