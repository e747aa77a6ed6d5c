"""Analytic FLOP model for the configurable classifiers.

Per-example forward cost sums, over layers, two operations per
multiply-accumulate plus bias, normalization and activation terms. A backward
pass is costed at exactly twice the forward pass, so one training step costs
3x forward per example. Evaluation and feature-extraction examples are
charged at the forward rate (feature extraction skips the head). Everything
is integer arithmetic so phase costs add exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import ArchSpec
from .network import layer_input_dims

BN_FLOPS_PER_ELEMENT = 4
BACKWARD_MULTIPLIER = 2


@dataclass(frozen=True)
class FlopCounts:
    """Work items of one training run; all counts are per-run totals."""

    train_steps: int = 0
    batch: int = 0
    eval_examples: int = 0
    feature_examples: int = 0

    def __add__(self, other: "FlopCounts") -> "FlopCounts":
        if self.train_steps and other.train_steps and self.batch != other.batch:
            raise ValueError("cannot add counts with different batch sizes")
        return FlopCounts(
            train_steps=self.train_steps + other.train_steps,
            batch=max(self.batch, other.batch),
            eval_examples=self.eval_examples + other.eval_examples,
            feature_examples=self.feature_examples + other.feature_examples,
        )

    def validate(self) -> None:
        if min(self.train_steps, self.batch, self.eval_examples, self.feature_examples) < 0:
            raise ValueError("FLOP counts must be non-negative")


def backbone_forward_flops(arch: ArchSpec, resolution: int) -> int:
    """Per-example forward cost of the backbone (head excluded)."""
    total = 0
    dims = layer_input_dims(arch, resolution)
    spatial = arch.input_kind == "image"
    h = w = resolution
    for i, (layer, in_dims) in enumerate(zip(arch.layers, dims)):
        if layer.kind == "conv":
            hin, win, cin = in_dims
            hout = (hin + 2 * (layer.kernel // 2) - layer.kernel) // layer.stride + 1
            wout = (win + 2 * (layer.kernel // 2) - layer.kernel) // layer.stride + 1
            macs = hout * wout * layer.width * cin * layer.kernel * layer.kernel
            elements = hout * wout * layer.width
            total += 2 * macs
            if layer.norm:
                total += BN_FLOPS_PER_ELEMENT * elements  # normalized layers carry no bias
            else:
                total += elements  # bias
            total += elements  # activation
            h, w = hout, wout
        else:
            if spatial and any(l.kind == "conv" for l in arch.layers[:i]):
                # global average pool feeding the first dense layer
                total += h * w * in_dims[0] + in_dims[0]
            total += 2 * in_dims[0] * layer.width
            if layer.norm:
                total += BN_FLOPS_PER_ELEMENT * layer.width
            else:
                total += layer.width  # bias
            total += layer.width  # activation
            spatial = False
    if spatial:
        total += h * w * arch.layers[-1].width + arch.layers[-1].width  # trailing pool
    return total


def head_forward_flops(feature_dim: int, num_classes: int) -> int:
    return 2 * feature_dim * num_classes + num_classes


def forward_flops(arch: ArchSpec, resolution: int, num_classes: int) -> int:
    return backbone_forward_flops(arch, resolution) + head_forward_flops(
        arch.feature_dim, num_classes
    )


def flop_estimate(
    arch: ArchSpec, resolution: int, num_classes: int, counts: FlopCounts
) -> int:
    """Total FLOPs for the given work items; additive and monotone in counts."""
    counts.validate()
    fwd = forward_flops(arch, resolution, num_classes)
    fwd_backbone = backbone_forward_flops(arch, resolution)
    train = counts.train_steps * counts.batch * (1 + BACKWARD_MULTIPLIER) * fwd
    return train + counts.eval_examples * fwd + counts.feature_examples * fwd_backbone
