import numpy as np
import pytest

from model import ModelConfig, SSLModel
from numerics import OptimizerState, ValueGraph, grad_check
from replay import TopK, build_buffer
from stream import AugmentationConfig, build_schedule
from trainer import (
    RunHooks,
    StreamStepError,
    TrainConfig,
    TrainerState,
    er_step,
    overlap_loss,
    overlap_loss_node,
    run_stream,
    solar_step,
)


def _bank(means, angles, losses=None):
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    k = means.shape[0]
    losses = np.ones(k) if losses is None else np.asarray(losses, dtype=np.float64)
    return TopK(np.arange(k), losses, means, np.asarray(angles, dtype=np.float64))


def _config(**kwargs):
    base = dict(total_batch_size=16, stream_batch_size=8, passes=2, top_k=8, buffer_size=16,
                learning_rate=0.05, momentum=0.9, weight_decay=1e-4)
    base.update(kwargs)
    return TrainConfig(**base)


def _state(cfg: TrainConfig, input_dim: int = 6, seed: int = 0) -> TrainerState:
    model = SSLModel(ModelConfig(input_dim=input_dim, hidden_dim=8, feature_dim=5,
                                 projector_hidden=6, projection_dim=4, predictor_hidden=3,
                                 seed=seed))
    optimizer = OptimizerState.for_params(model.params, learning_rate=cfg.learning_rate,
                                          momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    buffer = build_buffer(cfg.policy, cfg.buffer_size, seed=seed + 1, eta=cfg.eta)
    augmentation = AugmentationConfig(noise_std=0.1, dropout=0.2, rng_seed=seed + 2)
    return TrainerState(model, optimizer, buffer, augmentation,
                        np.random.default_rng(augmentation.rng_seed))


def _schedule(dataset, cfg: TrainConfig, num_tasks: int = 2):
    return build_schedule(dataset, num_tasks, cfg.stream_batch_size, cfg.passes, seed=0)


class TestOverlapLoss:
    def test_identical_balls(self):
        value = overlap_loss(np.array([[1.0, 2.0, 2.0]]), np.array([0.3]),
                             _bank([[1.0, 2.0, 2.0]], [0.3]))
        # the clamped arccos keeps a hair of angle between identical directions
        assert value == pytest.approx(0.6, abs=1e-3)

    def test_separated_balls(self):
        value = overlap_loss(np.array([[1.0, 0.0]]), np.array([0.1]),
                             _bank([[0.0, 1.0]], [0.1]))
        assert value == 0.0

    def test_empty_bank(self):
        bank = _bank(np.zeros((0, 2)), np.zeros(0))
        assert overlap_loss(np.ones((3, 2)), np.full(3, 0.5), bank) == 0.0

    def test_partial_overlap(self):
        value = overlap_loss(np.array([[1.0, 0.0]]), np.array([0.4]),
                             _bank([[np.cos(0.5), np.sin(0.5)]], [0.3]))
        assert value == pytest.approx(0.2, abs=1e-9)

    def test_averaged_over_batch_and_bank(self):
        means = np.array([[1.0, 0.0], [0.0, 1.0]])
        bank = _bank([[1.0, 0.0], [-1.0, 0.0]], [0.2, 0.2])
        # only (row 0, entry 0) intersects, with margin ~0.4
        assert overlap_loss(means, np.array([0.2, 0.2]), bank) == pytest.approx(0.1, abs=1e-3)

    def test_gradients_match_finite_differences(self, rng):
        for trial in range(5):
            g = ValueGraph()
            means = g.leaf(rng.standard_normal((6, 4)), name="zbar", requires_grad=True)
            angles = g.leaf(rng.uniform(0.2, 1.2, size=6), name="theta", requires_grad=True)
            bank = _bank(rng.standard_normal((5, 4)), rng.uniform(0.2, 1.2, size=5))
            loss = overlap_loss_node(g, means, angles, bank)
            assert grad_check(g, loss, step=1e-6) < 1e-4, f"trial {trial}"

    def test_bank_receives_no_gradient(self, rng):
        g = ValueGraph()
        means = g.leaf(rng.standard_normal((3, 4)), name="zbar", requires_grad=True)
        angles = g.leaf(np.full(3, 1.0), name="theta", requires_grad=True)
        bank = _bank(rng.standard_normal((2, 4)), [1.0, 1.0])
        snapshot = bank.mean_features.copy()
        overlap_loss_node(g, means, angles, bank)
        np.testing.assert_array_equal(bank.mean_features, snapshot)
        assert set(g.names) >= {"zbar", "theta", "overlap_loss"}


class TestSteps:
    def test_first_step_trains_on_stream_only(self, toy_dataset):
        cfg = _config(total_batch_size=32, stream_batch_size=10)
        state = _state(cfg)
        record = solar_step(state, (np.arange(10), toy_dataset.X[:10]), 0, cfg)
        assert record.batch_size == 10
        assert record.stream_size == 10
        assert record.buffer_size == 10
        assert record.overlap_loss == 0.0
        assert not record.skipped

    def test_replay_fills_the_batch(self, toy_dataset):
        cfg = _config()
        state = _state(cfg)
        solar_step(state, (np.arange(8), toy_dataset.X[:8]), 0, cfg)
        record = solar_step(state, (np.arange(8, 16), toy_dataset.X[8:16]), 0, cfg)
        assert record.batch_size == 16
        assert record.stream_size == 8
        assert record.buffer_size == 16

    def test_later_pass_replays_only(self, toy_dataset):
        cfg = _config()
        state = _state(cfg)
        stream = (np.arange(8), toy_dataset.X[:8])
        solar_step(state, stream, 0, cfg)
        record = solar_step(state, stream, 1, cfg)
        assert record.stream_size == 0
        assert record.batch_size == 8
        assert len(state.buffer) == 8

    def test_batch_of_one_is_skipped_but_stored(self, toy_dataset):
        cfg = _config()
        state = _state(cfg)
        before = {k: v.copy() for k, v in state.model.params.items()}
        record = solar_step(state, (np.array([5]), toy_dataset.X[5:6]), 0, cfg)
        assert record.skipped
        assert 5 in state.buffer
        for k, v in state.model.params.items():
            np.testing.assert_array_equal(before[k], v)
        # the next regular step still inserts with full statistics
        record = solar_step(state, (np.arange(10, 18), toy_dataset.X[10:18]), 0, cfg)
        assert not record.skipped
        assert state.buffer.mean_features.shape == (9, 5)

    def test_skipped_replay_step_leaves_counts(self, toy_dataset):
        cfg = _config(policy="deviation_aware")
        state = _state(cfg)
        solar_step(state, (np.array([5]), toy_dataset.X[5:6]), 0, cfg)
        # a later pass replays the single entry alone
        record = solar_step(state, None, 1, cfg)
        assert record.skipped
        np.testing.assert_array_equal(state.buffer.counts, [0])
        record = solar_step(state, (np.arange(10, 18), toy_dataset.X[10:18]), 0, cfg)
        assert not record.skipped
        assert state.buffer.entry(5).extraction_count == 1

    def test_buffer_statistics_are_shifted_losses(self, toy_dataset):
        cfg = _config()
        state = _state(cfg)
        record = solar_step(state, (np.arange(8), toy_dataset.X[:8]), 0, cfg)
        np.testing.assert_allclose(state.buffer.losses, record.per_sample_losses + 1.0)
        assert np.all(state.buffer.losses >= 0.0)

    def test_er_skips_stats_for_uniform_policies(self, toy_dataset):
        cfg = _config(policy="reservoir", mode="er")
        state = _state(cfg)
        er_step(state, (np.arange(8), toy_dataset.X[:8]), cfg)
        stored = state.buffer.losses.copy()
        er_step(state, (np.arange(8), toy_dataset.X[:8]), cfg, pass_index=1)
        np.testing.assert_array_equal(state.buffer.losses, stored)

    def test_same_seed_same_records(self, toy_dataset):
        cfg = _config()
        schedule = _schedule(toy_dataset, cfg)
        a = run_stream(_state(cfg), toy_dataset, schedule, cfg, progress=False)
        b = run_stream(_state(cfg), toy_dataset, schedule, cfg, progress=False)
        assert [r.row() for r in a] == [r.row() for r in b]


class TestOverlapAblation:
    def test_zero_weight_matches_experience_replay(self, toy_dataset):
        solar_cfg = _config(overlap_weight=0.0)
        er_cfg = _config(overlap_weight=0.0, mode="er")
        schedule = _schedule(toy_dataset, solar_cfg)
        solar_state, er_state = _state(solar_cfg), _state(er_cfg)
        solar = run_stream(solar_state, toy_dataset, schedule, solar_cfg, progress=False)
        er = run_stream(er_state, toy_dataset, schedule, er_cfg, progress=False)
        assert [r.row() for r in solar] == [r.row() for r in er]
        for name, value in solar_state.model.params.items():
            np.testing.assert_array_equal(value, er_state.model.params[name])
        np.testing.assert_array_equal(solar_state.buffer.losses, er_state.buffer.losses)

    def test_runs_agree_until_overlap_activates(self, toy_dataset):
        solar_cfg = _config(overlap_weight=1.0)
        er_cfg = _config(overlap_weight=1.0, mode="er")
        schedule = _schedule(toy_dataset, solar_cfg)
        solar = run_stream(_state(solar_cfg), toy_dataset, schedule, solar_cfg, progress=False)
        er = run_stream(_state(er_cfg), toy_dataset, schedule, er_cfg, progress=False)
        for s, e in zip(solar, er):
            assert s.ssl_loss == e.ssl_loss
            if s.overlap_loss > 0:
                break
            assert s.total_loss == e.total_loss


class TestRunStream:
    def test_step_count_and_indices(self, toy_dataset):
        cfg = _config()
        schedule = _schedule(toy_dataset, cfg)
        state = _state(cfg)
        records = run_stream(state, toy_dataset, schedule, cfg, progress=False)
        assert len(records) == schedule.num_steps == 20
        assert [r.step for r in records] == list(range(20))
        assert state.step == 20
        assert [r.pass_index for r in records[:4]] == [0, 1, 0, 1]

    def test_hook_order(self, toy_dataset):
        cfg = _config()
        schedule = _schedule(toy_dataset, cfg)
        events = []
        hooks = RunHooks(
            on_step=[lambda record, state: events.append(("step", record.step, state.step))],
            on_task_end=[lambda task, state: events.append(("task", task, state.step))],
        )
        run_stream(_state(cfg), toy_dataset, schedule, cfg, hooks=hooks, progress=False)
        task_events = [e for e in events if e[0] == "task"]
        assert task_events == [("task", 0, 10), ("task", 1, 20)]
        i = events.index(("task", 0, 10))
        assert events[i + 1] == ("step", 9, 10)

    def test_task_end_hook_runs_once_per_task(self, toy_dataset):
        cfg = _config(passes=1)
        schedule = _schedule(toy_dataset, cfg, num_tasks=4)
        calls = []
        hooks = RunHooks(on_task_end=[lambda task, state: calls.append(task)])
        run_stream(_state(cfg), toy_dataset, schedule, cfg, hooks=hooks, progress=False)
        assert calls == [0, 1, 2, 3]

    def test_failures_carry_stream_position(self, toy_dataset):
        cfg = _config()
        schedule = _schedule(toy_dataset, cfg)
        state = _state(cfg, input_dim=7)
        with pytest.raises(StreamStepError) as err:
            run_stream(state, toy_dataset, schedule, cfg, progress=False)
        assert (err.value.step, err.value.position, err.value.pass_index) == (0, 0, 0)
        assert isinstance(err.value.__cause__, ValueError)


class TestTrainConfig:
    @pytest.mark.parametrize("kwargs", [
        {"total_batch_size": 4, "stream_batch_size": 8},
        {"overlap_weight": -1.0},
        {"top_k": -1},
        {"eta": 1.5},
        {"mode": "offline"},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)
