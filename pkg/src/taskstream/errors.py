"""Exception types shared across the package.

Exit-code mapping for the CLI lives in ``cli.py``; library code raises these
and never calls ``sys.exit`` itself.
"""

from __future__ import annotations


class TaskStreamError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TaskStreamError):
    """Invalid run configuration; message names the offending field."""


class DataError(TaskStreamError):
    """Missing, corrupt or inconsistent data (manifests, archives, caches)."""


class CausalityViolation(TaskStreamError):
    """A learner touched a task beyond the current stream position."""

    def __init__(self, cursor: int, requested: int):
        self.cursor = cursor
        self.requested = requested
        super().__init__(
            f"causality violation: task index {requested} requested while the "
            f"stream cursor is at {cursor}"
        )


class TrainingError(TaskStreamError):
    """A predictor training run failed; carries the compute spent so far."""

    def __init__(self, message: str, *, step: int = 0, flops: int = 0):
        self.step = step
        self.flops = flops
        super().__init__(message)


class NonFiniteLossError(TrainingError):
    """Loss became NaN/inf during training."""
