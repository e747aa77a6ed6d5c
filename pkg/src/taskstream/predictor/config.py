"""Predictor configuration: architecture specs, training knobs, batch sizing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

from ..errors import ConfigError


@dataclass(frozen=True)
class LayerSpec:
    """One backbone layer. Conv layers must precede dense layers."""

    kind: str  # "dense" | "conv"
    width: int  # output features (dense) or output channels (conv)
    kernel: int = 3
    stride: int = 1
    norm: bool = False

    def validate(self) -> None:
        if self.kind not in ("dense", "conv"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.width < 1:
            raise ConfigError("layer width must be >= 1")
        if self.kind == "conv" and (self.kernel < 1 or self.stride < 1):
            raise ConfigError("conv kernel and stride must be >= 1")


@dataclass(frozen=True)
class ArchSpec:
    """Backbone architecture; a per-task dense head is attached on top.

    ``input_kind`` is "vector" (input_dim features) or "image"
    (resolution x resolution x input_channels). Image backbones apply global
    average pooling after the last conv layer.
    """

    input_kind: str
    input_dim: int = 0
    input_channels: int = 3
    layers: tuple[LayerSpec, ...] = ()
    activation: str = "relu"

    def validate(self, resolution: int | None = None) -> None:
        if self.input_kind not in ("vector", "image"):
            raise ConfigError(f"unknown input kind {self.input_kind!r}")
        if self.input_kind == "vector" and self.input_dim < 1:
            raise ConfigError("vector input requires input_dim >= 1")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not self.layers:
            raise ConfigError("architecture needs at least one layer")
        seen_dense = False
        for layer in self.layers:
            layer.validate()
            if layer.kind == "conv":
                if self.input_kind != "image":
                    raise ConfigError("conv layers require image input")
                if seen_dense:
                    raise ConfigError("conv layers must precede dense layers")
            else:
                seen_dense = True

    @property
    def feature_dim(self) -> int:
        """Width of the penultimate representation fed to task heads."""
        return self.layers[-1].width

    def to_json(self) -> dict[str, Any]:
        return {
            "input_kind": self.input_kind,
            "input_dim": self.input_dim,
            "input_channels": self.input_channels,
            "activation": self.activation,
            "layers": [
                {
                    "kind": l.kind,
                    "width": l.width,
                    "kernel": l.kernel,
                    "stride": l.stride,
                    "norm": l.norm,
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "ArchSpec":
        return cls(
            input_kind=data["input_kind"],
            input_dim=int(data["input_dim"]),
            input_channels=int(data["input_channels"]),
            activation=data["activation"],
            layers=tuple(
                LayerSpec(
                    kind=l["kind"],
                    width=int(l["width"]),
                    kernel=int(l["kernel"]),
                    stride=int(l["stride"]),
                    norm=bool(l["norm"]),
                )
                for l in data["layers"]
            ),
        )


def mlp_arch(input_dim: int, widths: tuple[int, ...] = (64,), norm: bool = False) -> ArchSpec:
    return ArchSpec(
        input_kind="vector",
        input_dim=input_dim,
        layers=tuple(LayerSpec("dense", w, norm=norm) for w in widths),
    )


def small_conv_arch(
    channels: tuple[int, ...] = (8, 16, 32),
    dense_width: int = 64,
    input_channels: int = 3,
    norm: bool = False,
) -> ArchSpec:
    """Stride-2 conv stack, global average pool, then one dense layer."""
    layers = [LayerSpec("conv", c, kernel=3, stride=2, norm=norm) for c in channels]
    layers.append(LayerSpec("dense", dense_width))
    return ArchSpec(input_kind="image", input_channels=input_channels, layers=tuple(layers))


def compute_batch_size(dataset_size: int, max_batch: int = 512, fraction: float = 0.0025) -> int:
    """Batch size heuristic: min(B, max(16, 2^floor(log2(p * D))))."""
    if dataset_size < 1:
        raise ConfigError("dataset_size must be >= 1")
    if max_batch < 16:
        raise ConfigError("max_batch must be >= 16")
    if fraction <= 0:
        raise ConfigError("fraction must be > 0")
    target = fraction * dataset_size
    power = 2.0 ** math.floor(math.log2(target))
    return int(min(max_batch, max(16, power)))


@dataclass(frozen=True)
class PredictorConfig:
    """Everything a single training run needs besides the data."""

    arch: ArchSpec
    input_resolution: int = 64
    max_batch: int = 512
    batch_fraction: float = 0.0025
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_fraction: float = 0.05
    num_updates: int = 1000
    learning_rate: float = 1e-2
    lr_floor: float = 0.0
    label_smoothing: float = 0.0
    schedule: str = "cosine"  # "cosine" | "piecewise"
    random_crop: bool = True
    horizontal_flip: bool = True
    eval_schedule: int = 100
    seed: int = 0

    def validate(self) -> None:
        self.arch.validate()
        if not 0 < self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        if self.num_updates < 0:
            raise ConfigError("num_updates must be >= 0")
        if self.schedule not in ("cosine", "piecewise"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.eval_schedule < 1:
            raise ConfigError("eval_schedule must be >= 1")
        if self.input_resolution < 1:
            raise ConfigError("input_resolution must be >= 1")

    def with_overrides(self, **kwargs: Any) -> "PredictorConfig":
        return replace(self, **kwargs)
