"""Meta-learner strategies: what to initialize from, what data to train on.

The strategy families differ along the axes of Tab-style baselines:
independent training, finetuning from the most recent or the most related
past task (with static or live relatedness features), multitask training with
weighted auxiliary losses, and initialization from a fixed pretrained model
(optionally competing against the task bank). Relatedness between the current
task and a candidate model is the accuracy of a 1-nearest-neighbor classifier
in that model's feature space, computed on capped subsamples of the current
task's train/val data; the embedding forward passes are charged to the task.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError, DataError, TrainingError
from .hpo import SearchSpace, Trial, best_trial, bhpo, build_space, random_search
from .predictor.config import PredictorConfig, mlp_arch, small_conv_arch
from .predictor.flops import FlopCounts, flop_estimate
from .predictor.metrics import (
    error_from_scores,
    evaluate,
    extract_features,
    sigmoid,
    softmax,
    stack_inputs,
    stack_labels,
)
from .predictor.state import PredictorState, deserialize_state, serialize_state
from .predictor.training import TrainReport, multitask_train, train
from .streams import Task, TaskKind

RELATEDNESS_TRAIN_CAP = 10_000
RELATEDNESS_VAL_CAP = 5_000
ENSEMBLE_TEMPERATURE = 0.1
FROZEN_LEARNING_RATE = 1e-2
FROZEN_LABEL_SMOOTHING = 0.15


class StrategyFamily(enum.Enum):
    INDEP = "Indep"
    FT_PREV = "FT_prev"
    FT_S = "FT_s"
    FT_D = "FT_d"
    MT = "MT"
    PT = "PT"
    PT_FT = "PT_FT"


FAMILIES_USING_SCORES = (
    StrategyFamily.FT_S,
    StrategyFamily.FT_D,
    StrategyFamily.MT,
    StrategyFamily.PT_FT,
)


@dataclass(frozen=True)
class Strategy:
    family: StrategyFamily
    mt_k: int = 1
    ensemble: bool = False
    ensemble_temperature: float = ENSEMBLE_TEMPERATURE
    pretrained_source: str | None = None
    charge_embedding_flops: bool = True
    # FT_s frozen independent models: update count defaults to the trial
    # budget, learning rate to FROZEN_LEARNING_RATE
    frozen_updates: int | None = None
    frozen_learning_rate: float | None = None

    def validate(self) -> None:
        needs_pretrained = self.family in (StrategyFamily.PT, StrategyFamily.PT_FT)
        if needs_pretrained and not self.pretrained_source:
            raise ConfigError(f"{self.family.value} requires pretrained_source")
        if not needs_pretrained and self.pretrained_source:
            raise ConfigError(f"{self.family.value} does not take pretrained_source")
        if self.mt_k < 1:
            raise ConfigError("mt_k must be >= 1")

    def label(self) -> str:
        parts = [self.family.value]
        if self.family is StrategyFamily.MT:
            parts.append(f"k{self.mt_k}")
        if self.ensemble:
            parts.append("ens")
        return "-".join(parts)


@dataclass
class BankEntry:
    task_id: str
    task_index: int
    state: PredictorState
    val_error: float
    provenance: str


@dataclass
class MetaLearnerState:
    """Knowledge carried between tasks: model bank plus task references."""

    bank: dict[str, BankEntry] = field(default_factory=dict)
    frozen_bank: dict[str, BankEntry] = field(default_factory=dict)
    dataset_refs: list[str] = field(default_factory=list)
    pretrained: PredictorState | None = None

    def ordered_entries(self, frozen: bool = False) -> list[BankEntry]:
        source = self.frozen_bank if frozen else self.bank
        return sorted(source.values(), key=lambda e: e.task_index)


@dataclass(frozen=True)
class RelatednessScore:
    source_task_id: str
    source_task_index: int
    score: float
    embed_flops: int


PRETRAINED_ID = "pretrained"
PRETRAINED_INDEX = -1
SCRATCH = "scratch"


def _eval_config_for_state(state: PredictorState) -> PredictorConfig:
    return PredictorConfig(
        arch=state.arch,
        input_resolution=state.resolution,
        num_updates=0,
        random_crop=False,
        horizontal_flip=False,
    )


def _subsample(split, cap: int, rng: np.random.Generator):
    if len(split) <= cap:
        return list(split)
    idx = rng.choice(len(split), size=cap, replace=False)
    return [split[i] for i in idx]


def _knn_labels(examples, kind: TaskKind, num_classes: int) -> np.ndarray:
    return stack_labels(examples, kind, num_classes)


def relatedness_scores(
    task: Task,
    candidates: Sequence[tuple[str, int, PredictorState]],
    seed: int,
    train_cap: int = RELATEDNESS_TRAIN_CAP,
    val_cap: int = RELATEDNESS_VAL_CAP,
) -> list[RelatednessScore]:
    """1-NN accuracy of the task's val subset against its train subset, per candidate.

    Features are L2-normalized so the nearest neighbor is by cosine
    similarity. Multi-label tasks score the per-class agreement with the
    neighbor's label vector instead of exact-match accuracy.
    """
    if not candidates:
        return []
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    train_sub = _subsample(task.train, train_cap, rng)
    val_sub = _subsample(task.val, val_cap, rng)
    train_labels = _knn_labels(train_sub, task.kind, task.num_classes)
    val_labels = _knn_labels(val_sub, task.kind, task.num_classes)

    input_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
    scores = []
    for task_id, task_index, state in candidates:
        config = _eval_config_for_state(state)
        cache_key = (config.arch.input_kind, config.input_resolution)
        if cache_key not in input_cache:
            input_cache[cache_key] = (
                stack_inputs(train_sub, config, mode="eval"),
                stack_inputs(val_sub, config, mode="eval"),
            )
        train_x, val_x = input_cache[cache_key]
        train_feats = extract_features(state, train_x)
        val_feats = extract_features(state, val_x)
        train_feats = train_feats / np.maximum(
            np.linalg.norm(train_feats, axis=1, keepdims=True), 1e-12
        )
        val_feats = val_feats / np.maximum(
            np.linalg.norm(val_feats, axis=1, keepdims=True), 1e-12
        )
        neighbor = (val_feats @ train_feats.T).argmax(axis=1)
        # single-label: plain accuracy; multi-label: per-class agreement
        score = float((train_labels[neighbor] == val_labels).mean())
        embed_flops = flop_estimate(
            state.arch,
            state.resolution,
            task.num_classes,
            FlopCounts(feature_examples=len(train_sub) + len(val_sub)),
        )
        scores.append(
            RelatednessScore(
                source_task_id=task_id,
                source_task_index=task_index,
                score=score,
                embed_flops=embed_flops,
            )
        )
    return scores


def _argmax_earliest(scores: Sequence[RelatednessScore]) -> RelatednessScore:
    best = None
    for score in sorted(scores, key=lambda s: s.source_task_index):
        if best is None or score.score > best.score:
            best = score
    return best


def select_init(
    strategy: Strategy,
    state: MetaLearnerState,
    scores: Sequence[RelatednessScore] | None = None,
) -> tuple[PredictorState | None, str]:
    """Pick the initialization for the next predictor; pure in its arguments."""
    family = strategy.family
    if family is StrategyFamily.INDEP:
        return None, SCRATCH
    if family is StrategyFamily.PT:
        if state.pretrained is None:
            raise ConfigError("PT strategy has no pretrained parameters loaded")
        return state.pretrained, PRETRAINED_ID
    if family is StrategyFamily.FT_PREV:
        entries = state.ordered_entries()
        if not entries:
            return None, SCRATCH
        last = entries[-1]
        return last.state, last.task_id

    if family in (StrategyFamily.FT_D, StrategyFamily.MT, StrategyFamily.FT_S):
        if not scores:
            return None, SCRATCH
        best = _argmax_earliest(scores)
        bank = state.frozen_bank if family is StrategyFamily.FT_S else state.bank
        entry = bank.get(best.source_task_id)
        if entry is None:
            raise DataError(f"relatedness winner {best.source_task_id!r} missing from bank")
        return entry.state, entry.task_id

    if family is StrategyFamily.PT_FT:
        if state.pretrained is None:
            raise ConfigError("PT_FT strategy has no pretrained parameters loaded")
        if not scores:
            return state.pretrained, PRETRAINED_ID
        best = _argmax_earliest(scores)
        if best.source_task_id == PRETRAINED_ID:
            return state.pretrained, PRETRAINED_ID
        entry = state.bank.get(best.source_task_id)
        if entry is None:
            raise DataError(f"relatedness winner {best.source_task_id!r} missing from bank")
        return entry.state, entry.task_id

    raise ConfigError(f"unhandled strategy family {family}")


# ---------------------------------------------------------------------------
# Trial ensembling
# ---------------------------------------------------------------------------


def ensemble_weights(accuracies: Sequence[float], temperature: float) -> np.ndarray:
    """softmax(accuracies / T); sums to 1, shift-invariant in the accuracies."""
    if temperature <= 0:
        raise ConfigError("ensemble temperature must be > 0")
    scaled = np.asarray(accuracies, dtype=np.float64) / temperature
    return softmax(scaled[None, :])[0]


def ensemble_predict(
    members: Sequence[tuple[PredictorState, float]],
    examples,
    task_id: str,
    kind: TaskKind,
    temperature: float = ENSEMBLE_TEMPERATURE,
) -> np.ndarray:
    """Weighted mixture of member probability outputs on the given examples."""
    if not members:
        raise ConfigError("ensemble needs at least one member")
    weights = ensemble_weights([acc for _, acc in members], temperature)
    mixture = None
    for (state, _), weight in zip(members, weights):
        config = _eval_config_for_state(state)
        head = state.head_for(task_id)
        x = stack_inputs(examples, config, mode="eval")
        feats = extract_features(state, x)
        logits = feats @ head["W"] + head["b"]
        probs = softmax(logits) if kind is TaskKind.SINGLE_LABEL else sigmoid(logits)
        mixture = weight * probs if mixture is None else mixture + weight * probs
    return mixture


def ensemble_error(
    members: Sequence[tuple[PredictorState, float]],
    examples,
    kind: TaskKind,
    task_id: str,
    temperature: float = ENSEMBLE_TEMPERATURE,
) -> float:
    probs = ensemble_predict(members, examples, task_id, kind, temperature)
    labels = stack_labels(examples, kind, probs.shape[1])
    return error_from_scores(probs, labels, kind)


def _ensemble_eval_flops(members: Sequence[tuple[PredictorState, float]], n: int, num_classes: int) -> int:
    total = 0
    for state, _ in members:
        total += flop_estimate(
            state.arch, state.resolution, num_classes, FlopCounts(eval_examples=n)
        )
    return total


# ---------------------------------------------------------------------------
# Per-task training with hyper-parameter search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Budgets:
    """Per-task search budget: trial count, update count, engine and space."""

    n_trials: int = 2
    num_updates: int = 500
    engine: str = "random"  # "random" | "bhpo"
    space: str = "small"

    def validate(self) -> None:
        if not 2 <= self.n_trials <= 32:
            raise ConfigError("n_trials must lie in [2, 32]")
        if self.num_updates < 0:
            raise ConfigError("num_updates must be >= 0")
        if self.engine not in ("random", "bhpo"):
            raise ConfigError(f"unknown search engine {self.engine!r}")


@dataclass
class TaskOutcome:
    task_id: str
    task_index: int
    provenance: str
    chosen_hparams: dict[str, Any]
    report: TrainReport
    val_error: float
    flops: int
    trials: list[Trial]
    relatedness: list[RelatednessScore]
    ensemble_members: list[tuple[PredictorState, float]] | None
    new_state: MetaLearnerState


def config_for_trial(
    base: PredictorConfig, hparams: dict[str, Any], task: Task, seed: int, num_updates: int
) -> PredictorConfig:
    overrides: dict[str, Any] = {"seed": seed, "num_updates": num_updates}
    if "learning_rate" in hparams:
        overrides["learning_rate"] = float(hparams["learning_rate"])
    if "label_smoothing" in hparams:
        overrides["label_smoothing"] = float(hparams["label_smoothing"])
    if "schedule" in hparams:
        overrides["schedule"] = str(hparams["schedule"])
    if "max_batch" in hparams:
        overrides["max_batch"] = int(hparams["max_batch"])
    if "random_crop" in hparams:
        overrides["random_crop"] = bool(hparams["random_crop"])
    if "horizontal_flip" in hparams:
        overrides["horizontal_flip"] = bool(hparams["horizontal_flip"])
    config = base.with_overrides(**overrides)
    arch_name = hparams.get("arch_name")
    if arch_name == "mlp" and config.arch.input_kind == "vector":
        config = config.with_overrides(arch=mlp_arch(config.arch.input_dim))
    elif arch_name == "small_conv" and config.arch.input_kind == "image":
        config = config.with_overrides(arch=small_conv_arch())
    return config


def _trial_seed(run_seed: int, task_index: int, trial_index: int, purpose: int = 0) -> int:
    seq = np.random.SeedSequence(entropy=run_seed, spawn_key=(task_index, trial_index, purpose))
    return int(seq.generate_state(1)[0])


def _candidates_for(strategy: Strategy, state: MetaLearnerState):
    if strategy.family is StrategyFamily.FT_S:
        return [(e.task_id, e.task_index, e.state) for e in state.ordered_entries(frozen=True)]
    if strategy.family in (StrategyFamily.FT_D, StrategyFamily.MT):
        return [(e.task_id, e.task_index, e.state) for e in state.ordered_entries()]
    if strategy.family is StrategyFamily.PT_FT:
        cands = [(e.task_id, e.task_index, e.state) for e in state.ordered_entries()]
        cands.append((PRETRAINED_ID, PRETRAINED_INDEX, state.pretrained))
        return cands
    return []


def train_task(
    strategy: Strategy,
    task: Task,
    task_index: int,
    state: MetaLearnerState,
    resolve_task,
    budgets: Budgets,
    base_config: PredictorConfig,
    run_seed: int,
) -> TaskOutcome:
    """Run the search for one task and return the outcome plus the updated state.

    ``resolve_task`` maps a past task id to its Task and is routed through the
    protocol's causal view, so any attempt to touch future data fails loudly.
    Trial errors abort the trial, not the task, unless every trial fails.
    """
    strategy.validate()
    budgets.validate()
    task_flops = 0

    if strategy.family in (StrategyFamily.PT, StrategyFamily.PT_FT) and state.pretrained is None:
        state = replace_pretrained(state, strategy)

    scores: list[RelatednessScore] = []
    candidates = _candidates_for(strategy, state)
    if strategy.family in FAMILIES_USING_SCORES and candidates:
        scores = relatedness_scores(
            task, candidates, seed=_trial_seed(run_seed, task_index, 0, purpose=1)
        )
        embed_total = sum(s.embed_flops for s in scores)
        if strategy.charge_embedding_flops:
            task_flops += embed_total

    init_state, provenance = select_init(strategy, state, scores)

    aux_tasks: list[Task] = []
    if strategy.family is StrategyFamily.MT and scores:
        ranked = sorted(scores, key=lambda s: (-s.score, s.source_task_index))
        for score in ranked[: strategy.mt_k]:
            aux_tasks.append(resolve_task(score.source_task_id))

    space = build_space(budgets.space, mt_weight=bool(aux_tasks))
    reports: list[TrainReport | None] = []

    def objective(hparams: dict[str, Any]) -> tuple[float, int]:
        trial_index = len(reports)
        config = config_for_trial(
            base_config,
            hparams,
            task,
            seed=_trial_seed(run_seed, task_index, trial_index),
            num_updates=budgets.num_updates,
        )
        try:
            if aux_tasks:
                report = multitask_train(
                    task, tuple(aux_tasks), float(hparams["aux_weight"]), config, init_state
                )
            else:
                report = train(task, config, init_state)
        except TrainingError:
            reports.append(None)
            raise
        reports.append(report)
        return report.val_error, report.flops

    engine = random_search if budgets.engine == "random" else bhpo
    trials = engine(space, budgets.n_trials, objective, _trial_seed(run_seed, task_index, 0))
    task_flops += sum(t.flops for t in trials)

    succeeded = [t for t in trials if reports[t.index] is not None]
    if not succeeded:
        raise TrainingError(f"all {len(trials)} trials failed on task {task.id}")
    chosen = best_trial(succeeded)
    chosen_report = reports[chosen.index]

    ensemble_members = None
    val_error = chosen_report.val_error
    if strategy.ensemble:
        ensemble_members = [
            (reports[t.index].final_state, 1.0 - reports[t.index].val_error)
            for t in succeeded
        ]
        val_error = ensemble_error(
            ensemble_members,
            task.val,
            task.kind,
            task.id,
            strategy.ensemble_temperature,
        )
        task_flops += _ensemble_eval_flops(ensemble_members, len(task.val), task.num_classes)

    new_state = MetaLearnerState(
        bank=dict(state.bank),
        frozen_bank=dict(state.frozen_bank),
        dataset_refs=list(state.dataset_refs),
        pretrained=state.pretrained,
    )
    new_state.bank[task.id] = BankEntry(
        task_id=task.id,
        task_index=task_index,
        state=chosen_report.final_state,
        val_error=chosen_report.val_error,
        provenance=provenance,
    )
    new_state.dataset_refs.append(task.id)

    if strategy.family is StrategyFamily.FT_S:
        frozen_updates = (
            strategy.frozen_updates if strategy.frozen_updates is not None else budgets.num_updates
        )
        frozen_lr = (
            strategy.frozen_learning_rate
            if strategy.frozen_learning_rate is not None
            else FROZEN_LEARNING_RATE
        )
        frozen_config = base_config.with_overrides(
            learning_rate=frozen_lr,
            label_smoothing=FROZEN_LABEL_SMOOTHING,
            num_updates=frozen_updates,
            seed=_trial_seed(run_seed, task_index, 0, purpose=2),
        )
        frozen_report = train(task, frozen_config, None)
        task_flops += frozen_report.flops
        new_state.frozen_bank[task.id] = BankEntry(
            task_id=task.id,
            task_index=task_index,
            state=frozen_report.final_state,
            val_error=frozen_report.val_error,
            provenance=SCRATCH,
        )

    return TaskOutcome(
        task_id=task.id,
        task_index=task_index,
        provenance=provenance,
        chosen_hparams=dict(chosen.hparams),
        report=chosen_report,
        val_error=val_error,
        flops=task_flops,
        trials=trials,
        relatedness=scores,
        ensemble_members=ensemble_members,
        new_state=new_state,
    )


def evaluate_outcome(outcome: TaskOutcome, examples, kind: TaskKind, strategy: Strategy) -> float:
    """Error of the task's evaluation model (ensemble when enabled) on a split."""
    if outcome.ensemble_members:
        return ensemble_error(
            outcome.ensemble_members,
            examples,
            kind,
            outcome.task_id,
            strategy.ensemble_temperature,
        )
    state = outcome.report.final_state
    return evaluate(state, examples, kind, outcome.task_id, _eval_config_for_state(state))


def replace_pretrained(state: MetaLearnerState, strategy: Strategy) -> MetaLearnerState:
    """Load pretrained parameters from the strategy's source path."""
    blob = Path(strategy.pretrained_source).read_bytes()
    pretrained = deserialize_state(blob)
    return MetaLearnerState(
        bank=state.bank,
        frozen_bank=state.frozen_bank,
        dataset_refs=state.dataset_refs,
        pretrained=pretrained,
    )


# ---------------------------------------------------------------------------
# State serialization (checkpointing)
# ---------------------------------------------------------------------------

STATE_MAGIC = b"TSML0001"


def state_to_bytes(state: MetaLearnerState) -> bytes:
    entries = []
    blobs = []
    for bank_name, bank in (("live", state.bank), ("frozen", state.frozen_bank)):
        for entry in sorted(bank.values(), key=lambda e: e.task_index):
            blob = serialize_state(entry.state)
            entries.append(
                {
                    "bank": bank_name,
                    "task_id": entry.task_id,
                    "task_index": entry.task_index,
                    "val_error": entry.val_error,
                    "provenance": entry.provenance,
                    "nbytes": len(blob),
                }
            )
            blobs.append(blob)
    pretrained_blob = b""
    if state.pretrained is not None:
        pretrained_blob = serialize_state(state.pretrained)
    header = {
        "version": 1,
        "dataset_refs": state.dataset_refs,
        "entries": entries,
        "pretrained_nbytes": len(pretrained_blob),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([STATE_MAGIC, struct.pack(">I", len(head)), head, *blobs, pretrained_blob])


def state_from_bytes(data: bytes) -> MetaLearnerState:
    if not data.startswith(STATE_MAGIC):
        raise DataError("not a meta-learner state blob (bad magic)")
    pos = len(STATE_MAGIC)
    (hlen,) = struct.unpack(">I", data[pos : pos + 4])
    pos += 4
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    if header["version"] != 1:
        raise DataError(f"unsupported meta-learner state version {header['version']}")
    state = MetaLearnerState(dataset_refs=list(header["dataset_refs"]))
    for meta in header["entries"]:
        blob = data[pos : pos + meta["nbytes"]]
        pos += meta["nbytes"]
        entry = BankEntry(
            task_id=meta["task_id"],
            task_index=meta["task_index"],
            state=deserialize_state(blob),
            val_error=meta["val_error"],
            provenance=meta["provenance"],
        )
        if meta["bank"] == "live":
            state.bank[entry.task_id] = entry
        else:
            state.frozen_bank[entry.task_id] = entry
    if header["pretrained_nbytes"]:
        state.pretrained = deserialize_state(data[pos : pos + header["pretrained_nbytes"]])
    return state
