"""Per-task hyper-parameter search: random sampling and GP-based sequential search.

Random search draws every dimension independently and may evaluate trials in
parallel; the Bayesian engine is inherently sequential because each proposal
conditions on all previous observations. That asymmetry is part of the
compute story and is preserved here.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import ConfigError, TrainingError
from .gp import GPFitError, MaternGP

logger = logging.getLogger(__name__)

Objective = Callable[[dict[str, Any]], tuple[float, int]]

UCB_BETA = 2.0
NUM_CANDIDATES = 1024


@dataclass(frozen=True)
class Continuous:
    name: str
    lo: float
    hi: float
    log: bool = False

    def validate(self) -> None:
        if not self.lo < self.hi:
            raise ConfigError(f"dimension {self.name}: lo must be < hi")
        if self.log and self.lo <= 0:
            raise ConfigError(f"dimension {self.name}: log scale needs lo > 0")

    def sample(self, rng: np.random.Generator) -> float:
        return self.from_unit(rng.random())

    def from_unit(self, u: float) -> float:
        if self.log:
            return float(np.exp(np.log(self.lo) + u * (np.log(self.hi) - np.log(self.lo))))
        return float(self.lo + u * (self.hi - self.lo))

    def to_unit(self, value: float) -> float:
        if self.log:
            return float((np.log(value) - np.log(self.lo)) / (np.log(self.hi) - np.log(self.lo)))
        return float((value - self.lo) / (self.hi - self.lo))

    @property
    def encoded_width(self) -> int:
        return 1


@dataclass(frozen=True)
class Categorical:
    name: str
    values: tuple = ()

    def validate(self) -> None:
        if not self.values:
            raise ConfigError(f"dimension {self.name}: needs at least one value")

    def sample(self, rng: np.random.Generator):
        return self.values[int(rng.integers(0, len(self.values)))]

    def from_unit(self, u: float):
        idx = min(int(u * len(self.values)), len(self.values) - 1)
        return self.values[idx]

    @property
    def encoded_width(self) -> int:
        return len(self.values)

    def encode(self, value) -> np.ndarray:
        out = np.zeros(len(self.values))
        out[self.values.index(value)] = 1.0
        return out


@dataclass(frozen=True)
class GridDim:
    """Ordered numeric values; encoded ordinally for the GP."""

    name: str
    values: tuple[float, ...] = ()

    def validate(self) -> None:
        if not self.values:
            raise ConfigError(f"dimension {self.name}: needs at least one value")
        if list(self.values) != sorted(self.values):
            raise ConfigError(f"dimension {self.name}: grid values must be sorted")

    def sample(self, rng: np.random.Generator) -> float:
        return self.values[int(rng.integers(0, len(self.values)))]

    def from_unit(self, u: float) -> float:
        idx = min(int(u * len(self.values)), len(self.values) - 1)
        return self.values[idx]

    def to_unit(self, value: float) -> float:
        if len(self.values) == 1:
            return 0.0
        return self.values.index(value) / (len(self.values) - 1)

    @property
    def encoded_width(self) -> int:
        return 1


Dimension = Continuous | Categorical | GridDim


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple[Dimension, ...]

    def __post_init__(self) -> None:
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dimension names in search space: {names}")
        for dim in self.dimensions:
            dim.validate()

    def sample(self, rng: np.random.Generator) -> dict[str, Any]:
        return {d.name: d.sample(rng) for d in self.dimensions}

    def from_unit(self, point: np.ndarray) -> dict[str, Any]:
        return {d.name: d.from_unit(float(u)) for d, u in zip(self.dimensions, point)}

    @property
    def unit_dim(self) -> int:
        return len(self.dimensions)

    def encode(self, hparams: dict[str, Any]) -> np.ndarray:
        """Map a configuration into the GP input space (one-hot categoricals)."""
        parts = []
        for dim in self.dimensions:
            value = hparams[dim.name]
            if isinstance(dim, Categorical):
                parts.append(dim.encode(value))
            else:
                parts.append(np.array([dim.to_unit(value)]))
        return np.concatenate(parts)

    def contains(self, hparams: dict[str, Any]) -> bool:
        for dim in self.dimensions:
            value = hparams.get(dim.name)
            if value is None:
                return False
            if isinstance(dim, Continuous):
                if not dim.lo <= value <= dim.hi:
                    return False
            elif value not in dim.values:
                return False
        return True


@dataclass(frozen=True)
class Trial:
    hparams: dict[str, Any]
    val_error: float
    flops: int
    index: int


def _run_objective(objective: Objective, hparams: dict[str, Any], index: int) -> Trial:
    try:
        val_error, flops = objective(hparams)
    except TrainingError as exc:
        logger.warning("trial %d failed: %s", index, exc)
        return Trial(hparams=hparams, val_error=1.0, flops=exc.flops, index=index)
    return Trial(hparams=hparams, val_error=float(val_error), flops=int(flops), index=index)


def random_search(
    space: SearchSpace, n_trials: int, objective: Objective, seed: int
) -> list[Trial]:
    """Independent draws from each dimension; failures score error 1.0."""
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    configs = [space.sample(rng) for _ in range(n_trials)]
    return [_run_objective(objective, cfg, i) for i, cfg in enumerate(configs)]


def _sobol_unit_points(n: int, dim: int, seed: int) -> np.ndarray:
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    with warnings.catch_warnings():
        # balance warnings for non-power-of-two draws are expected here
        warnings.simplefilter("ignore", UserWarning)
        return sampler.random(n)


def bhpo(
    space: SearchSpace,
    n_trials: int,
    objective: Objective,
    seed: int,
    beta: float = UCB_BETA,
    num_candidates: int = NUM_CANDIDATES,
) -> list[Trial]:
    """Sequential GP search minimizing the confidence bound mu - beta * sigma.

    The first max(2, dim + 1) trials are space-filling; afterwards a GP fit to
    all observed (configuration, error) pairs scores quasi-random candidate
    points and the lowest bound is evaluated next. A failed GP fit falls back
    to random sampling for that trial.
    """
    if n_trials < 2:
        raise ConfigError("bhpo needs n_trials >= 2")
    dim = space.unit_dim
    num_initial = min(n_trials, max(2, dim + 1))
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    trials: list[Trial] = []
    init_points = _sobol_unit_points(num_initial, dim, seed)
    for i in range(num_initial):
        hparams = space.from_unit(init_points[i])
        trials.append(_run_objective(objective, hparams, i))

    for i in range(num_initial, n_trials):
        candidates_unit = _sobol_unit_points(num_candidates, dim, seed + 1 + i)
        candidates = [space.from_unit(p) for p in candidates_unit]
        try:
            x = np.stack([space.encode(t.hparams) for t in trials])
            y = np.array([t.val_error for t in trials])
            gp = MaternGP().fit(x, y)
            xs = np.stack([space.encode(c) for c in candidates])
            mean, std = gp.predict(xs)
            best = int(np.argmin(mean - beta * std))
            proposal = candidates[best]
        except GPFitError as exc:
            logger.warning("GP fit failed at trial %d (%s); sampling at random", i, exc)
            proposal = space.sample(rng)
        trials.append(_run_objective(objective, proposal, i))
    return trials


def best_trial(trials: Sequence[Trial]) -> Trial:
    """Lowest error; ties prefer fewer FLOPs, then the lower trial index."""
    if not trials:
        raise ConfigError("best_trial needs at least one trial")
    return min(trials, key=lambda t: (t.val_error, t.flops, t.index))


# ---------------------------------------------------------------------------
# Named search spaces
# ---------------------------------------------------------------------------

CHEAP_LR_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
FIXED_LABEL_SMOOTHING = 0.15
LR_RANGE = (1e-4, 1e-1)
SMOOTHING_RANGE = (0.0, 0.3)
MT_WEIGHT_RANGE = (0.01, 1.0)
BATCH_GRID = (16.0, 32.0, 64.0, 128.0, 256.0, 512.0)


def build_space(name: str, mt_weight: bool = False) -> SearchSpace:
    """Named spaces: 'cheap' (lr grid), 'small' (lr + smoothing), 'large' (7 dims)."""
    dims: list[Dimension]
    if name == "cheap":
        dims = [
            GridDim("learning_rate", CHEAP_LR_GRID),
            GridDim("label_smoothing", (FIXED_LABEL_SMOOTHING,)),
        ]
    elif name == "small":
        dims = [
            Continuous("learning_rate", *LR_RANGE, log=True),
            Continuous("label_smoothing", *SMOOTHING_RANGE),
        ]
    elif name == "large":
        dims = [
            Continuous("learning_rate", *LR_RANGE, log=True),
            Continuous("label_smoothing", *SMOOTHING_RANGE),
            Categorical("schedule", ("cosine", "piecewise")),
            GridDim("max_batch", BATCH_GRID),
            Categorical("arch_name", ("small_conv", "mlp")),
            Categorical("random_crop", (True, False)),
            Categorical("horizontal_flip", (True, False)),
        ]
    else:
        raise ConfigError(f"unknown search space {name!r}")
    if mt_weight:
        dims.append(Continuous("aux_weight", *MT_WEIGHT_RANGE, log=True))
    return SearchSpace(tuple(dims))
