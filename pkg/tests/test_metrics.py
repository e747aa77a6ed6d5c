"""Evaluation metrics against brute-force oracles."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from taskstream.errors import DataError
from taskstream.predictor.metrics import (
    average_precision,
    error_from_scores,
    mean_average_precision,
    softmax,
)
from taskstream.streams import TaskKind


def brute_force_ap(scores, relevant) -> float:
    """AP by definition: precision at each positive of the full ranking.

    Ranking sorts by descending score with index as tie-break, mirroring the
    documented deterministic convention.
    """
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, total = 0, 0.0
    for rank, idx in enumerate(order, start=1):
        if relevant[idx]:
            hits += 1
            total += hits / rank
    return total / sum(relevant)


def test_ap_hand_case():
    # class A: perfect ranking; class B: positive at rank 2 of 3
    ap_a = average_precision(np.array([0.9, 0.2, 0.7]), np.array([1, 0, 1]))
    ap_b = average_precision(np.array([0.8, 0.6, 0.3]), np.array([0, 1, 0]))
    assert ap_a == pytest.approx(1.0)
    assert ap_b == pytest.approx(0.5)
    scores = np.array([[0.9, 0.8], [0.2, 0.6], [0.7, 0.3]])
    labels = np.array([[1, 0], [0, 1], [1, 0]])
    assert mean_average_precision(scores, labels) == pytest.approx(0.75)
    assert error_from_scores(scores, labels, TaskKind.MULTI_LABEL) == pytest.approx(0.25)


def test_ap_matches_brute_force_randomized():
    rng = np.random.default_rng(42)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        scores = rng.random(n)
        relevant = rng.integers(0, 2, n)
        if relevant.sum() == 0:
            relevant[int(rng.integers(0, n))] = 1
        assert average_precision(scores, relevant) == pytest.approx(
            brute_force_ap(scores, relevant), abs=1e-12
        )


def test_ap_with_score_ties_deterministic():
    scores = np.array([0.5, 0.5, 0.5, 0.2])
    relevant = np.array([0, 1, 0, 1])
    # tie broken by index: ranking is 0,1,2,3
    assert average_precision(scores, relevant) == pytest.approx((1 / 2 + 2 / 4) / 2)


def test_ap_requires_positives():
    with pytest.raises(DataError):
        average_precision(np.array([0.1, 0.2]), np.array([0, 0]))


def test_map_skips_empty_classes():
    scores = np.array([[0.9, 0.1], [0.2, 0.4]])
    labels = np.array([[1, 0], [0, 0]])  # class 1 has no positives
    assert mean_average_precision(scores, labels) == pytest.approx(1.0)


def test_single_label_error_counts():
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
    labels = np.array([0, 1, 1, 1])
    assert error_from_scores(scores, labels, TaskKind.SINGLE_LABEL) == pytest.approx(0.25)
    perfect = np.array([0, 1, 0, 1])
    assert error_from_scores(scores, perfect, TaskKind.SINGLE_LABEL) == 0.0


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((50, 7)) * 10
    probs = softmax(logits)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert (probs >= 0).all()
