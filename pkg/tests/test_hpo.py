"""Hyper-parameter search engines and the named search spaces."""

from __future__ import annotations

import numpy as np
import pytest

from taskstream.errors import ConfigError, TrainingError
from taskstream.gp import MaternGP
from taskstream.hpo import (
    Categorical,
    Continuous,
    GridDim,
    SearchSpace,
    Trial,
    best_trial,
    bhpo,
    build_space,
    random_search,
)


def _space_1d():
    return SearchSpace((Continuous("x", 0.0, 1.0),))


def test_random_search_counts_and_indices():
    trials = random_search(_space_1d(), 8, lambda h: (h["x"], 1), seed=0)
    assert [t.index for t in trials] == list(range(8))
    assert len(trials) == 8


def test_random_search_deterministic():
    a = random_search(_space_1d(), 6, lambda h: (h["x"], 1), seed=5)
    b = random_search(_space_1d(), 6, lambda h: (h["x"], 1), seed=5)
    assert [t.hparams for t in a] == [t.hparams for t in b]
    c = random_search(_space_1d(), 6, lambda h: (h["x"], 1), seed=6)
    assert [t.hparams for t in a] != [t.hparams for t in c]


def test_random_search_respects_bounds_over_random_spaces():
    rng = np.random.default_rng(0)
    for _ in range(25):
        lo = float(rng.uniform(-5, 0))
        hi = float(rng.uniform(0.5, 5))
        log_lo = float(rng.uniform(1e-4, 1e-2))
        log_hi = float(rng.uniform(1e-1, 10))
        values = tuple(sorted(rng.uniform(-3, 3, size=3).tolist()))
        space = SearchSpace(
            (
                Continuous("linear", lo, hi),
                Continuous("logscale", log_lo, log_hi, log=True),
                GridDim("grid", values),
                Categorical("cat", ("a", "b")),
            )
        )
        trials = random_search(space, 10, lambda h: (0.5, 1), seed=int(rng.integers(1 << 30)))
        for t in trials:
            assert lo <= t.hparams["linear"] <= hi
            assert log_lo <= t.hparams["logscale"] <= log_hi
            assert t.hparams["grid"] in values
            assert t.hparams["cat"] in ("a", "b")
            assert space.contains(t.hparams)


def test_objective_failure_recorded_as_error_one():
    def objective(h):
        if h["x"] > 0.5:
            raise TrainingError("boom", flops=7)
        return h["x"], 3

    trials = random_search(_space_1d(), 12, objective, seed=1)
    failed = [t for t in trials if t.val_error == 1.0 and t.flops == 7]
    succeeded = [t for t in trials if t.val_error < 1.0]
    assert failed and succeeded
    assert len(failed) + len(succeeded) == 12


def test_cheap_grid_space():
    space = build_space("cheap")
    trials = random_search(space, 16, lambda h: (0.5, 1), seed=3)
    for t in trials:
        assert t.hparams["learning_rate"] in (1e-4, 1e-3, 1e-2, 1e-1)
        assert t.hparams["label_smoothing"] == 0.15


def test_large_space_has_seven_dimensions():
    space = build_space("large")
    assert space.unit_dim == 7
    names = [d.name for d in space.dimensions]
    assert names == [
        "learning_rate",
        "label_smoothing",
        "schedule",
        "max_batch",
        "arch_name",
        "random_crop",
        "horizontal_flip",
    ]


def test_mt_weight_dimension_appended():
    space = build_space("small", mt_weight=True)
    names = [d.name for d in space.dimensions]
    assert names[-1] == "aux_weight"
    trials = random_search(space, 8, lambda h: (0.5, 1), seed=0)
    for t in trials:
        assert 0.01 <= t.hparams["aux_weight"] <= 1.0


# ---------------------------------------------------------------------------
# best_trial
# ---------------------------------------------------------------------------


def _trial(i, err, flops):
    return Trial(hparams={"x": i}, val_error=err, flops=flops, index=i)


def test_best_trial_argmin():
    trials = [_trial(0, 0.3, 5), _trial(1, 0.2, 5), _trial(2, 0.25, 5)]
    assert best_trial(trials).index == 1


def test_best_trial_flop_tiebreak():
    trials = [_trial(0, 0.2, 5), _trial(1, 0.2, 3)]
    assert best_trial(trials).index == 1


def test_best_trial_index_tiebreak():
    trials = [_trial(0, 0.2, 5), _trial(1, 0.2, 5)]
    assert best_trial(trials).index == 0


def test_best_trial_permutation_invariant():
    rng = np.random.default_rng(2)
    trials = [_trial(i, float(rng.choice([0.1, 0.2])), int(rng.choice([3, 5]))) for i in range(10)]
    reference = best_trial(trials)
    for _ in range(10):
        perm = list(rng.permutation(10))
        assert best_trial([trials[i] for i in perm]).index == reference.index


def test_best_trial_empty():
    with pytest.raises(ConfigError):
        best_trial([])


# ---------------------------------------------------------------------------
# Bayesian search
# ---------------------------------------------------------------------------


def test_bhpo_converges_on_quadratic():
    trials = bhpo(_space_1d(), 20, lambda h: ((h["x"] - 0.3) ** 2, 1), seed=5)
    best = best_trial(trials)
    assert abs(best.hparams["x"] - 0.3) < 0.05


def test_bhpo_sequential_and_deterministic():
    calls = []

    def objective(h):
        calls.append(h["x"])
        return (h["x"] - 0.5) ** 2, 1

    trials = bhpo(_space_1d(), 10, objective, seed=2)
    assert len(calls) == 10
    assert [t.hparams["x"] for t in trials] == calls  # strictly in proposal order
    repeat = bhpo(_space_1d(), 10, lambda h: ((h["x"] - 0.5) ** 2, 1), seed=2)
    assert [t.hparams for t in trials] == [t.hparams for t in repeat]


def test_bhpo_single_point_space_matches_random():
    space = SearchSpace((GridDim("lr", (0.01,)), Categorical("opt", ("sgd",))))
    b = bhpo(space, 5, lambda h: (0.5, 1), seed=0)
    r = random_search(space, 5, lambda h: (0.5, 1), seed=0)
    assert [t.hparams for t in b] == [t.hparams for t in r]


def test_bhpo_proposals_stay_in_bounds():
    space = SearchSpace(
        (
            Continuous("a", -2.0, 2.0),
            Continuous("b", 1e-3, 1.0, log=True),
            Categorical("c", (1, 2, 3)),
        )
    )

    def objective(h):
        return abs(h["a"]) / 2 + h["b"], 1

    for t in bhpo(space, 15, objective, seed=7):
        assert -2.0 <= t.hparams["a"] <= 2.0
        assert 1e-3 <= t.hparams["b"] <= 1.0
        assert t.hparams["c"] in (1, 2, 3)


def test_bhpo_needs_two_trials():
    with pytest.raises(ConfigError):
        bhpo(_space_1d(), 1, lambda h: (0.0, 1), seed=0)


# ---------------------------------------------------------------------------
# GP surrogate
# ---------------------------------------------------------------------------


def test_gp_interpolates_noise_free_observations():
    rng = np.random.default_rng(4)
    x = rng.random((15, 3))
    y = np.sin(2 * x[:, 0]) + x[:, 1] * x[:, 2]
    gp = MaternGP().fit(x, y)
    mean, std = gp.predict(x)
    assert np.abs(mean - y).max() < 1e-6
    assert (std >= 0).all()


def test_gp_uncertainty_grows_away_from_data():
    x = np.array([[0.1], [0.2], [0.3]])
    y = np.array([1.0, 1.1, 0.9])
    gp = MaternGP().fit(x, y)
    _, near = gp.predict(np.array([[0.2]]))
    _, far = gp.predict(np.array([[0.95]]))
    assert far[0] > near[0]


def test_gp_constant_outputs():
    x = np.array([[0.1], [0.5], [0.9]])
    y = np.zeros(3)
    gp = MaternGP().fit(x, y)
    mean, _ = gp.predict(np.array([[0.3]]))
    assert abs(mean[0]) < 1e-6
