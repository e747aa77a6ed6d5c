"""Learning-rate schedules: linear warmup into cosine decay or step drops.

The schedule is a pure function of the step index over [0, num_updates]:
lr(0) is the floor, lr(warmup_end) is the peak rate, and lr(num_updates)
returns to the floor (cosine) or the last drop level (piecewise).
"""

from __future__ import annotations

import math

PIECEWISE_DROPS = ((0.5, 0.1), (0.75, 0.01))


def warmup_steps(num_updates: int, warmup_fraction: float) -> int:
    return max(1, int(round(warmup_fraction * num_updates)))


def cosine_warmup_lr(
    step: int,
    num_updates: int,
    peak: float,
    warmup_fraction: float,
    floor: float = 0.0,
) -> float:
    if num_updates <= 0:
        return floor
    warm = warmup_steps(num_updates, warmup_fraction)
    if step < warm:
        return floor + (peak - floor) * (step / warm)
    span = max(1, num_updates - warm)
    progress = min(1.0, (step - warm) / span)
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * progress))


def piecewise_warmup_lr(
    step: int,
    num_updates: int,
    peak: float,
    warmup_fraction: float,
    floor: float = 0.0,
    drops: tuple[tuple[float, float], ...] = PIECEWISE_DROPS,
) -> float:
    if num_updates <= 0:
        return floor
    warm = warmup_steps(num_updates, warmup_fraction)
    if step < warm:
        return floor + (peak - floor) * (step / warm)
    factor = 1.0
    for at, value in drops:
        if step >= at * num_updates:
            factor = value
    return max(floor, peak * factor)


def learning_rate(
    schedule: str,
    step: int,
    num_updates: int,
    peak: float,
    warmup_fraction: float,
    floor: float = 0.0,
) -> float:
    if schedule == "cosine":
        return cosine_warmup_lr(step, num_updates, peak, warmup_fraction, floor)
    if schedule == "piecewise":
        return piecewise_warmup_lr(step, num_updates, peak, warmup_fraction, floor)
    raise ValueError(f"unknown schedule {schedule!r}")
