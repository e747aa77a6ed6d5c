"""Analysis functions against brute-force oracles and hand evaluations."""

from __future__ import annotations

import numpy as np
import pytest

from taskstream.analysis import (
    ParetoPoint,
    aggregate,
    curve_auc,
    dominates,
    forward_transfer,
    fwt_by_task,
    nearest_flops_match,
    pareto_front,
    regret_curve,
    resolution_bucket,
    size_bucket,
    sliced_aggregates,
    transfer_matrix,
)
from taskstream.errors import DataError
from taskstream.metalearner import Budgets
from taskstream.predictor import PredictorConfig, mlp_arch
from taskstream.protocol import RunRecord
from taskstream.streams import Stream
from taskstream.synthetic import RelatednessEdge, SyntheticStreamSpec, make_synthetic_stream


def _record(task_id, error, flops, index=0, **meta) -> RunRecord:
    task_meta = {"name": task_id, "domain": "d", "train_size": 100, "avg_resolution": [64, 64]}
    task_meta.update(meta)
    return RunRecord(
        task_id=task_id,
        task_index=index,
        phase="meta_test",
        strategy="s",
        hparams={},
        init_provenance="scratch",
        error=error,
        flops=flops,
        learning_curve=((1, 1.0 - error),),
        seed=0,
        wall_time=0.0,
        task_meta=task_meta,
    )


# ---------------------------------------------------------------------------
# aggregate
# ---------------------------------------------------------------------------


def test_aggregate_mean_and_sum():
    records = [_record("a", 0.1, 5), _record("b", 0.3, 7, index=1)]
    error, flops = aggregate(records)
    assert error == pytest.approx(0.2)
    assert flops == 12


def test_aggregate_filter_by_domain():
    records = [
        _record("a", 0.1, 5, domain="ocr"),
        _record("b", 0.5, 7, index=1, domain="object"),
    ]
    error, flops = aggregate(records, lambda r: r.task_meta["domain"] == "ocr")
    assert error == pytest.approx(0.1)
    assert flops == 5
    with pytest.raises(DataError):
        aggregate(records, lambda r: False)


def test_aggregate_partition_recombines():
    rng = np.random.default_rng(0)
    records = [
        _record(f"t{i}", float(rng.random()), int(rng.integers(1, 100)), index=i,
                domain=rng.choice(["a", "b", "c"]))
        for i in range(30)
    ]
    whole_error, whole_flops = aggregate(records)
    parts = sliced_aggregates(records, "domain")
    combined_error = sum(err * count for err, _, count in parts.values()) / 30
    combined_flops = sum(fl for _, fl, _ in parts.values())
    assert whole_error == pytest.approx(combined_error)
    assert whole_flops == combined_flops


def test_size_buckets_cover_and_left_closed():
    assert size_bucket(999) == "<1k"
    assert size_bucket(1000) == "1k-10k"  # documented left-closed convention
    assert size_bucket(9999) == "1k-10k"
    assert size_bucket(10_000) == "10k-100k"
    assert size_bucket(100_000) == ">=100k"
    buckets = {size_bucket(n) for n in [5, 1500, 50_000, 2_000_000]}
    assert buckets == {"<1k", "1k-10k", "10k-100k", ">=100k"}


def test_resolution_buckets():
    assert resolution_bucket([50, 800]) == "<64"  # min side governs
    assert resolution_bucket([64, 64]) == "64-128"
    assert resolution_bucket([130, 260]) == "128-256"
    assert resolution_bucket([2228, 3281]) == ">=256"


# ---------------------------------------------------------------------------
# regret
# ---------------------------------------------------------------------------


def test_regret_self_is_zero():
    records = [_record("a", 0.3, 1), _record("b", 0.5, 1, index=1)]
    np.testing.assert_array_equal(regret_curve(records, records), np.zeros(2))


def test_regret_hand_values():
    records = [_record("a", 0.2, 1), _record("b", 0.3, 1, index=1)]
    reference = [_record("a", 0.3, 1), _record("b", 0.3, 1, index=1)]
    np.testing.assert_allclose(regret_curve(records, reference), [-0.1, -0.1])


def test_regret_zero_increment_keeps_final_value():
    records = [_record("a", 0.2, 1), _record("b", 0.3, 1, index=1)]
    reference = [_record("a", 0.3, 1), _record("b", 0.3, 1, index=1)]
    final = regret_curve(records, reference)[-1]
    extended = records + [_record("c", 0.4, 1, index=2)]
    reference_ext = reference + [_record("c", 0.4, 1, index=2)]
    assert regret_curve(extended, reference_ext)[-1] == pytest.approx(final)


def test_regret_final_value_identity():
    rng = np.random.default_rng(1)
    n = 7
    records = [_record(f"t{i}", float(rng.random()), 1, index=i) for i in range(n)]
    reference = [_record(f"t{i}", float(rng.random()), 1, index=i) for i in range(n)]
    curve = regret_curve(records, reference)
    e, _ = aggregate(records)
    e_ref, _ = aggregate(reference)
    assert curve[-1] == pytest.approx(n * (e - e_ref))


def test_regret_sequence_mismatch():
    records = [_record("a", 0.2, 1)]
    reference = [_record("b", 0.2, 1)]
    with pytest.raises(DataError):
        regret_curve(records, reference)


# ---------------------------------------------------------------------------
# forward transfer
# ---------------------------------------------------------------------------


def test_fwt_identical_curves_zero():
    curve = ((10, 0.5), (20, 0.7), (30, 0.8))
    assert forward_transfer(curve, curve) == pytest.approx(0.0)


def test_fwt_perfect_second_curve_is_one():
    first = ((10, 0.0), (20, 1.0))  # AUC 0.5
    second = ((10, 1.0), (20, 1.0))  # AUC 1
    assert forward_transfer(first, second) == pytest.approx(1.0)


def test_fwt_hand_value():
    # constant curves make the AUCs trivial: AUC1=0.5, AUC2=0.8 -> 0.6
    first = ((0, 0.5), (100, 0.5))
    second = ((0, 0.8), (100, 0.8))
    assert forward_transfer(first, second) == pytest.approx(0.6)


def test_fwt_undefined_when_first_auc_is_one():
    first = ((0, 1.0), (10, 1.0))
    with pytest.raises(DataError):
        forward_transfer(first, first)


def test_fwt_affine_step_reparameterization_invariant():
    rng = np.random.default_rng(2)
    steps = np.sort(rng.choice(np.arange(1, 500), size=6, replace=False))
    accs1 = rng.random(6)
    accs2 = rng.random(6)
    c1 = tuple((int(s), float(a)) for s, a in zip(steps, accs1))
    c2 = tuple((int(s), float(a)) for s, a in zip(steps, accs2))
    base = forward_transfer(c1, c2)
    scaled1 = tuple((int(3 * s + 17), a) for s, a in c1)
    scaled2 = tuple((int(3 * s + 17), a) for s, a in c2)
    assert forward_transfer(scaled1, scaled2) == pytest.approx(base)


def test_fwt_by_task_detects_repeats():
    records = [
        _record("t0-a", 0.5, 1, index=0, name="t0"),
        _record("t1", 0.5, 1, index=1, name="t1"),
        _record("t0-b", 0.2, 1, index=2, name="t0"),
    ]
    result = fwt_by_task(records)
    assert set(result) == {"t0"}
    assert result["t0"] > 0


# ---------------------------------------------------------------------------
# pareto front
# ---------------------------------------------------------------------------


def brute_force_front(points):
    """O(n^2) dominance oracle with duplicate collapsing."""
    unique = {}
    for p in sorted(points, key=lambda p: (p.flops, p.error, p.label)):
        unique.setdefault((p.flops, p.error), p)
    kept = []
    for p in unique.values():
        if not any(dominates(q, p) for q in unique.values() if q is not p):
            kept.append(p)
    return sorted(kept, key=lambda p: (p.flops, p.error, p.label))


def test_pareto_hand_case():
    points = [
        ParetoPoint("a", 0.30, 1),
        ParetoPoint("b", 0.25, 2),
        ParetoPoint("c", 0.35, 1),  # dominated by a (same flops, worse error)
    ]
    front = pareto_front(points)
    assert [p.label for p in front] == ["a", "b"]


def test_pareto_single_point():
    p = ParetoPoint("only", 0.5, 100)
    assert pareto_front([p]) == [p]


def test_pareto_duplicates_collapse():
    points = [ParetoPoint("a", 0.5, 100), ParetoPoint("b", 0.5, 100)]
    front = pareto_front(points)
    assert len(front) == 1


def test_pareto_matches_oracle_randomized():
    rng = np.random.default_rng(7)
    for trial in range(100):
        n = int(rng.integers(1, 201))
        points = [
            ParetoPoint(
                f"p{i}",
                float(np.round(rng.random(), 3)),
                int(rng.integers(0, 50)),
            )
            for i in range(n)
        ]
        fast = pareto_front(points)
        oracle = brute_force_front(points)
        assert [(p.flops, p.error) for p in fast] == [(p.flops, p.error) for p in oracle]


def test_pareto_idempotent():
    rng = np.random.default_rng(8)
    points = [
        ParetoPoint(f"p{i}", float(rng.random()), int(rng.integers(0, 30)))
        for i in range(60)
    ]
    front = pareto_front(points)
    assert pareto_front(front) == front


def test_pareto_sorted_by_flops():
    rng = np.random.default_rng(9)
    points = [
        ParetoPoint(f"p{i}", float(rng.random()), int(rng.integers(0, 1000)))
        for i in range(50)
    ]
    front = pareto_front(points)
    flops = [p.flops for p in front]
    assert flops == sorted(flops)


def test_pareto_validates_points():
    with pytest.raises(DataError):
        pareto_front([ParetoPoint("bad", 1.5, 10)])


def test_nearest_flops_match():
    points = [ParetoPoint("a", 0.2, 100), ParetoPoint("b", 0.3, 1000)]
    assert nearest_flops_match(points, 90).label == "a"
    assert nearest_flops_match(points, 900).label == "b"


# ---------------------------------------------------------------------------
# transfer matrix (small end-to-end run)
# ---------------------------------------------------------------------------


def test_transfer_matrix_run_count_and_shape():
    spec = SyntheticStreamSpec(
        num_tasks=3,
        input_dim=8,
        train_size=40,
        val_size=30,
        test_size=30,
        teacher_width=4,
        seed=2,
    )
    stream = make_synthetic_stream(spec)
    config = PredictorConfig(arch=mlp_arch(8, (8,)), num_updates=15, eval_schedule=15)
    matrix = transfer_matrix(stream, Budgets(n_trials=2, num_updates=15), config, seed=0)
    assert matrix.num_training_runs == 3 + 3
    assert set(matrix.entries) == {(0, 1), (0, 2), (1, 2)}
    with pytest.raises(DataError):
        matrix.entry(1, 0)
    with pytest.raises(DataError):
        matrix.entry(1, 1)
    restored = type(matrix).from_json(matrix.to_json())
    assert restored.entries == matrix.entries
