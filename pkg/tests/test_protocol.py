"""Protocol drivers: causality guard, aggregation, records, checkpoint/resume."""

from __future__ import annotations

import json

import numpy as np
import pytest

from taskstream.errors import CausalityViolation, ConfigError, DataError
from taskstream.metalearner import Budgets, Strategy, StrategyFamily
from taskstream.predictor import PredictorConfig, mlp_arch
from taskstream.protocol import (
    CausalView,
    RunRecord,
    StrategyLearner,
    StreamLearner,
    TaskResult,
    read_checkpoint,
    read_record_log,
    resume_pass,
    run_meta_test,
    run_meta_train,
    write_record_log,
)
from taskstream.streams import Stream

from conftest import make_vector_task


class ScriptedLearner(StreamLearner):
    """Returns scripted (error, flops) pairs; used for exact aggregation checks."""

    def __init__(self, script):
        self.script = script

    def reset(self, seed):
        pass

    def learn_task(self, index, view):
        error, flops = self.script[index]
        return TaskResult(
            flops=flops,
            provenance="scratch",
            hparams={},
            learning_curve=((1, 1.0 - error),),
            val_error=error,
            error_for_role=lambda role: error,
        )


class ProbeLearner(StreamLearner):
    """Misbehaves by requesting the task after the cursor."""

    def reset(self, seed):
        pass

    def learn_task(self, index, view):
        view.task(index + 1)
        raise AssertionError("unreachable")


def _stream(n=3, boundary=2) -> Stream:
    tasks = tuple(make_vector_task(f"t{i}", seed=i, year=2000 + i) for i in range(n))
    return Stream(tasks=tasks, boundary=boundary)


# ---------------------------------------------------------------------------
# causal view
# ---------------------------------------------------------------------------


def test_causal_view_allows_past_and_current():
    stream = _stream()
    view = CausalView(stream, cursor=1)
    assert view.task(0).id == "t0"
    assert view.task(1).id == "t1"
    assert view.task_by_id("t0").id == "t0"


def test_causal_view_blocks_future():
    stream = _stream()
    view = CausalView(stream, cursor=1)
    with pytest.raises(CausalityViolation) as info:
        view.task(2)
    assert info.value.cursor == 1 and info.value.requested == 2
    with pytest.raises(CausalityViolation):
        view.task_by_id("t2")


def test_probe_learner_aborts_run_with_pair():
    stream = _stream()
    with pytest.raises(CausalityViolation) as info:
        run_meta_train(stream, ProbeLearner(), seed=0)
    assert (info.value.cursor, info.value.requested) == (0, 1)


# ---------------------------------------------------------------------------
# aggregation per the protocol definitions
# ---------------------------------------------------------------------------


def test_meta_train_aggregates_hand_values():
    stream = _stream(3, boundary=3)
    learner = ScriptedLearner({0: (0.1, 5), 1: (0.2, 7), 2: (0.3, 9)})
    result = run_meta_train(stream, learner, seed=0)
    assert result.mean_error == pytest.approx(0.2)
    assert result.total_flops == 21
    assert len(result.records) == 3


def test_meta_train_covers_prefix_only():
    stream = _stream(3, boundary=2)
    learner = ScriptedLearner({0: (0.1, 5), 1: (0.2, 7), 2: (0.9, 999)})
    result = run_meta_train(stream, learner, seed=0)
    assert len(result.records) == 2
    assert result.total_flops == 12


def test_meta_test_scores_suffix_but_charges_everything():
    stream = _stream(3, boundary=2)
    learner = ScriptedLearner({0: (0.4, 3), 1: (0.2, 4), 2: (0.1, 5)})
    result = run_meta_test(stream, learner, seed=0)
    assert result.mean_error == pytest.approx(0.1)
    assert result.total_flops == 12
    assert len(result.records) == 3
    assert [r.task_index for r in result.records] == [0, 1, 2]


def test_meta_test_requires_nonempty_suffix():
    stream = _stream(3, boundary=3)
    with pytest.raises(ConfigError):
        run_meta_test(stream, ScriptedLearner({}), seed=0)


def test_boundary_zero_unrepresentable():
    tasks = tuple(make_vector_task(f"t{i}", seed=i) for i in range(2))
    with pytest.raises(DataError):
        Stream(tasks=tasks, boundary=0)


def test_cflop_equals_sum_of_records_exactly():
    rng = np.random.default_rng(3)
    script = {i: (float(rng.random()), int(rng.integers(1, 10**6))) for i in range(6)}
    stream = _stream(6, boundary=4)
    learner = ScriptedLearner(script)
    result = run_meta_test(stream, learner, seed=0)
    assert result.total_flops == sum(r.flops for r in result.records)


def test_aggregation_order_independent():
    stream = _stream(4, boundary=2)
    script = {0: (0.5, 1), 1: (0.6, 1), 2: (0.3, 2), 3: (0.5, 2)}
    result = run_meta_test(stream, ScriptedLearner(script), seed=0)
    scored = [r.error for r in result.records if r.task_index >= 2]
    assert result.mean_error == pytest.approx(sum(scored) / len(scored))


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


def test_record_round_trip(tmp_path):
    stream = _stream(2, boundary=2)
    result = run_meta_train(stream, ScriptedLearner({0: (0.1, 5), 1: (0.2, 7)}), seed=3)
    path = tmp_path / "records.jsonl"
    write_record_log(path, result.records)
    restored = read_record_log(path)
    assert [r.task_id for r in restored] == ["t0", "t1"]
    assert restored[0].error == pytest.approx(0.1)
    assert restored[0].task_meta["domain"] == "synthetic"


def test_record_schema_version_rejected(tmp_path):
    record = RunRecord(
        task_id="x",
        task_index=0,
        phase="meta_train",
        strategy="s",
        hparams={},
        init_provenance="scratch",
        error=0.5,
        flops=1,
        learning_curve=(),
        seed=0,
        wall_time=0.0,
    )
    line = json.loads(record.to_json())
    line["v"] = 99
    path = tmp_path / "records.jsonl"
    path.write_text(json.dumps(line) + "\n")
    with pytest.raises(DataError, match="schema version"):
        read_record_log(path)


# ---------------------------------------------------------------------------
# end-to-end determinism and checkpoint/resume with the real learner
# ---------------------------------------------------------------------------


def _real_setup():
    stream = _stream(3, boundary=2)
    config = PredictorConfig(arch=mlp_arch(6, (8,)), num_updates=20, eval_schedule=10)
    make = lambda: StrategyLearner(
        Strategy(StrategyFamily.FT_PREV), Budgets(n_trials=2, num_updates=20), config
    )
    return stream, make


def _strip_wall_time(records):
    return [json.dumps({**json.loads(r.to_json()), "wall_time": None}) for r in records]


def test_identical_seed_identical_records():
    stream, make = _real_setup()
    a = run_meta_test(stream, make(), seed=9)
    b = run_meta_test(stream, make(), seed=9)
    assert _strip_wall_time(a.records) == _strip_wall_time(b.records)


def test_checkpoint_resume_matches_uninterrupted(tmp_path):
    stream, make = _real_setup()
    full = run_meta_test(stream, make(), seed=4)

    # interrupted run: process only task 0, then resume from its checkpoint
    ckpt = tmp_path / "ckpt.bin"

    class StopAfter(Exception):
        pass

    class InterruptingLearner(StrategyLearner):
        calls = 0

        def learn_task(self, index, view):
            if index >= 1:
                raise StopAfter()
            return super().learn_task(index, view)

    config = PredictorConfig(arch=mlp_arch(6, (8,)), num_updates=20, eval_schedule=10)
    interrupting = InterruptingLearner(
        Strategy(StrategyFamily.FT_PREV), Budgets(n_trials=2, num_updates=20), config
    )
    with pytest.raises(StopAfter):
        run_meta_test(stream, interrupting, seed=4, checkpoint_path=ckpt)

    data = read_checkpoint(ckpt)
    assert data.cursor == 1 and len(data.records) == 1

    resumed = resume_pass(stream, make(), ckpt)
    assert _strip_wall_time(resumed.records) == _strip_wall_time(full.records)
    assert resumed.mean_error == pytest.approx(full.mean_error)
    assert resumed.total_flops == full.total_flops


def test_resume_from_complete_checkpoint_is_noop(tmp_path):
    stream, make = _real_setup()
    ckpt = tmp_path / "ckpt.bin"
    full = run_meta_test(stream, make(), seed=4, checkpoint_path=ckpt)
    data = read_checkpoint(ckpt)
    assert data.cursor == len(stream)
    resumed = resume_pass(stream, make(), ckpt)
    assert _strip_wall_time(resumed.records) == _strip_wall_time(full.records)


def test_fresh_checkpoint_starts_at_first_task(tmp_path):
    stream, make = _real_setup()
    from taskstream.protocol import write_checkpoint

    ckpt = tmp_path / "ckpt.bin"
    learner = make()
    learner.reset(4)
    write_checkpoint(
        ckpt,
        phase="meta_test",
        seed=4,
        cursor=0,
        learner_state=learner.state_bytes(),
        records=[],
    )
    resumed = resume_pass(stream, make(), ckpt)
    full = run_meta_test(stream, make(), seed=4)
    assert _strip_wall_time(resumed.records) == _strip_wall_time(full.records)


def test_corrupt_checkpoint_rejected(tmp_path):
    ckpt = tmp_path / "ckpt.bin"
    ckpt.write_bytes(b"TSCK0001" + b"\x00\x00\x00\x05KABOOM")
    with pytest.raises(DataError):
        read_checkpoint(ckpt)
