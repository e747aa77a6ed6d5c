"""Run configuration: a hierarchical YAML file mapped onto typed dataclasses.

The CLI resolves a config file (plus flag overrides) into a RunConfig,
validates it with field-level messages, and echoes the resolved form into the
output directory for provenance. parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError, DataError
from .manifest import load_stream
from .metalearner import Budgets, Strategy, StrategyFamily
from .predictor.config import ArchSpec, PredictorConfig, mlp_arch, small_conv_arch
from .streams import (
    Stream,
    StreamVariant,
    apply_variant,
    make_class_partition_stream,
    variant_from_dict,
)
from .synthetic import make_synthetic_stream, spec_from_dict

FULL_TIER_UPDATES = (10_000, 100_000)
CHEAP_TIER_UPDATES = (1, 10_000)
TRIAL_RANGE = (2, 32)


@dataclass(frozen=True)
class StreamSource:
    kind: str  # "manifest" | "synthetic" | "class_partition"
    manifest: str | None = None
    synthetic_spec: dict[str, Any] | None = None
    base_task_id: str | None = None
    num_partitions: int = 0
    partition_seed: int = 0


@dataclass(frozen=True)
class PredictorSettings:
    arch: str = "mlp"  # "mlp" | "small_conv"
    widths: tuple[int, ...] = (32,)
    channels: tuple[int, ...] = (8, 16, 32)
    dense_width: int = 64
    norm: bool = False
    resolution: int = 64
    max_batch: int = 512
    batch_fraction: float = 0.0025
    warmup_fraction: float = 0.05
    eval_schedule: int = 100


@dataclass(frozen=True)
class RunConfig:
    stream: StreamSource
    strategy: Strategy
    budgets: Budgets
    predictor: PredictorSettings
    tier: str = "cheap"
    seeds: tuple[int, ...] = (0,)
    phase: str = "meta_test"
    output_dir: str = "runs/out"
    variant: StreamVariant | None = None

    def validate(self) -> None:
        if self.stream.kind not in ("manifest", "synthetic", "class_partition"):
            raise ConfigError(f"stream.kind: unknown value {self.stream.kind!r}")
        if self.stream.kind == "manifest" and not self.stream.manifest:
            raise ConfigError("stream.manifest: required for manifest streams")
        if self.stream.kind == "synthetic" and not self.stream.synthetic_spec:
            raise ConfigError("stream.spec: required for synthetic streams")
        if self.stream.kind == "class_partition":
            if not self.stream.manifest or not self.stream.base_task_id:
                raise ConfigError(
                    "stream.manifest and stream.base_task_id: required for "
                    "class-partition streams"
                )
            if self.stream.num_partitions < 1:
                raise ConfigError("stream.num_partitions: must be >= 1")
        try:
            self.strategy.validate()
        except ConfigError as exc:
            raise ConfigError(f"strategy: {exc}") from exc
        lo, hi = TRIAL_RANGE
        if not lo <= self.budgets.n_trials <= hi:
            raise ConfigError(f"search.n_trials: must lie in [{lo}, {hi}]")
        if self.tier not in ("cheap", "full"):
            raise ConfigError(f"tier: unknown value {self.tier!r}")
        bounds = FULL_TIER_UPDATES if self.tier == "full" else CHEAP_TIER_UPDATES
        if not bounds[0] <= self.budgets.num_updates <= bounds[1]:
            raise ConfigError(
                f"search.num_updates: {self.budgets.num_updates} outside the "
                f"{self.tier} tier range [{bounds[0]}, {bounds[1]}]"
            )
        if self.budgets.engine not in ("random", "bhpo"):
            raise ConfigError(f"search.engine: unknown value {self.budgets.engine!r}")
        if self.budgets.space not in ("cheap", "small", "large"):
            raise ConfigError(f"search.space: unknown value {self.budgets.space!r}")
        if self.phase not in ("meta_train", "meta_test", "transfer_matrix"):
            raise ConfigError(f"phase: unknown value {self.phase!r}")
        if not self.seeds:
            raise ConfigError("seeds: need at least one seed")
        if self.predictor.arch not in ("mlp", "small_conv"):
            raise ConfigError(f"predictor.arch: unknown value {self.predictor.arch!r}")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "stream": {"kind": self.stream.kind},
            "strategy": {
                "family": self.strategy.family.value,
                "mt_k": self.strategy.mt_k,
                "ensemble": self.strategy.ensemble,
                "ensemble_temperature": self.strategy.ensemble_temperature,
                "charge_embedding_flops": self.strategy.charge_embedding_flops,
            },
            "search": {
                "engine": self.budgets.engine,
                "space": self.budgets.space,
                "n_trials": self.budgets.n_trials,
                "num_updates": self.budgets.num_updates,
            },
            "predictor": {
                "arch": self.predictor.arch,
                "widths": list(self.predictor.widths),
                "channels": list(self.predictor.channels),
                "dense_width": self.predictor.dense_width,
                "norm": self.predictor.norm,
                "resolution": self.predictor.resolution,
                "max_batch": self.predictor.max_batch,
                "batch_fraction": self.predictor.batch_fraction,
                "warmup_fraction": self.predictor.warmup_fraction,
                "eval_schedule": self.predictor.eval_schedule,
            },
            "tier": self.tier,
            "seeds": list(self.seeds),
            "phase": self.phase,
            "output_dir": self.output_dir,
        }
        if self.stream.kind == "manifest":
            out["stream"]["manifest"] = self.stream.manifest
        elif self.stream.kind == "synthetic":
            out["stream"]["spec"] = self.stream.synthetic_spec
        else:
            out["stream"]["manifest"] = self.stream.manifest
            out["stream"]["base_task_id"] = self.stream.base_task_id
            out["stream"]["num_partitions"] = self.stream.num_partitions
            out["stream"]["partition_seed"] = self.stream.partition_seed
        if self.strategy.pretrained_source:
            out["strategy"]["pretrained_source"] = self.strategy.pretrained_source
        if self.strategy.frozen_updates is not None:
            out["strategy"]["frozen_updates"] = self.strategy.frozen_updates
        if self.variant is not None:
            variant: dict[str, Any] = {"kind": self.variant.kind}
            if self.variant.k:
                variant["k"] = self.variant.k
            if self.variant.seed:
                variant["seed"] = self.variant.seed
            if self.variant.domains:
                variant["domains"] = sorted(self.variant.domains)
            if self.variant.names:
                variant["names"] = sorted(self.variant.names)
            out["variant"] = variant
        return out


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    def section(name: str) -> dict[str, Any]:
        value = data.get(name)
        if value is None:
            raise ConfigError(f"{name}: section missing from config")
        if not isinstance(value, dict):
            raise ConfigError(f"{name}: expected a mapping")
        return value

    stream_data = section("stream")
    kind = stream_data.get("kind")
    stream = StreamSource(
        kind=str(kind),
        manifest=stream_data.get("manifest"),
        synthetic_spec=stream_data.get("spec"),
        base_task_id=stream_data.get("base_task_id"),
        num_partitions=int(stream_data.get("num_partitions", 0)),
        partition_seed=int(stream_data.get("partition_seed", 0)),
    )

    strategy_data = section("strategy")
    family_name = strategy_data.get("family")
    try:
        family = StrategyFamily(family_name)
    except ValueError as exc:
        raise ConfigError(f"strategy.family: unknown value {family_name!r}") from exc
    strategy = Strategy(
        family=family,
        mt_k=int(strategy_data.get("mt_k", 1)),
        ensemble=bool(strategy_data.get("ensemble", False)),
        ensemble_temperature=float(strategy_data.get("ensemble_temperature", 0.1)),
        pretrained_source=strategy_data.get("pretrained_source"),
        charge_embedding_flops=bool(strategy_data.get("charge_embedding_flops", True)),
        frozen_updates=(
            None
            if strategy_data.get("frozen_updates") is None
            else int(strategy_data["frozen_updates"])
        ),
    )

    search_data = section("search")
    budgets = Budgets(
        n_trials=int(search_data.get("n_trials", 2)),
        num_updates=int(search_data.get("num_updates", 500)),
        engine=str(search_data.get("engine", "random")),
        space=str(search_data.get("space", "small")),
    )

    predictor_data = data.get("predictor", {})
    predictor = PredictorSettings(
        arch=str(predictor_data.get("arch", "mlp")),
        widths=tuple(int(w) for w in predictor_data.get("widths", (32,))),
        channels=tuple(int(c) for c in predictor_data.get("channels", (8, 16, 32))),
        dense_width=int(predictor_data.get("dense_width", 64)),
        norm=bool(predictor_data.get("norm", False)),
        resolution=int(predictor_data.get("resolution", 64)),
        max_batch=int(predictor_data.get("max_batch", 512)),
        batch_fraction=float(predictor_data.get("batch_fraction", 0.0025)),
        warmup_fraction=float(predictor_data.get("warmup_fraction", 0.05)),
        eval_schedule=int(predictor_data.get("eval_schedule", 100)),
    )

    variant = None
    if data.get("variant") is not None:
        variant = variant_from_dict(data["variant"])

    config = RunConfig(
        stream=stream,
        strategy=strategy,
        budgets=budgets,
        predictor=predictor,
        tier=str(data.get("tier", "cheap")),
        seeds=tuple(int(s) for s in data.get("seeds", (0,))),
        phase=str(data.get("phase", "meta_test")),
        output_dir=str(data.get("output_dir", "runs/out")),
        variant=variant,
    )
    config.validate()
    return config


def load_config(path: Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if overrides:
        data = _deep_merge(data, overrides)
    return config_from_dict(data)


def _deep_merge(base: dict, extra: dict) -> dict:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# Building the runtime objects from a config
# ---------------------------------------------------------------------------


def build_stream(config: RunConfig, base_dir: Path | None = None) -> Stream:
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else base / path

    if config.stream.kind == "manifest":
        stream = load_stream(resolve(config.stream.manifest))
    elif config.stream.kind == "synthetic":
        stream = make_synthetic_stream(spec_from_dict(config.stream.synthetic_spec))
    else:
        source = load_stream(resolve(config.stream.manifest))
        base_task = source.task_by_id(config.stream.base_task_id)
        stream = make_class_partition_stream(
            base_task, config.stream.num_partitions, config.stream.partition_seed
        )
    if config.variant is not None:
        stream = apply_variant(stream, config.variant)
    return stream


def build_base_config(config: RunConfig, stream: Stream) -> PredictorConfig:
    """Concretize the predictor settings against the stream's input shape."""
    kinds = {("image" if t.train[0].input.dtype == np.uint8 else "vector") for t in stream.tasks}
    if len(kinds) != 1:
        raise DataError("stream mixes image and vector tasks; use separate runs")
    input_kind = kinds.pop()
    settings = config.predictor
    if input_kind == "vector":
        dims = {t.train[0].input.shape[-1] for t in stream.tasks}
        if len(dims) != 1:
            raise DataError("vector tasks must share one input dimension")
        arch: ArchSpec = mlp_arch(dims.pop(), settings.widths, norm=settings.norm)
    elif settings.arch == "small_conv":
        arch = small_conv_arch(
            settings.channels, settings.dense_width, norm=settings.norm
        )
    else:
        arch = mlp_arch(
            settings.resolution * settings.resolution * 3, settings.widths, norm=settings.norm
        )
        arch = ArchSpec(
            input_kind="image",
            input_channels=3,
            layers=arch.layers,
            activation=arch.activation,
        )
    return PredictorConfig(
        arch=arch,
        input_resolution=settings.resolution,
        max_batch=settings.max_batch,
        batch_fraction=settings.batch_fraction,
        warmup_fraction=settings.warmup_fraction,
        num_updates=config.budgets.num_updates,
        eval_schedule=settings.eval_schedule,
    )
