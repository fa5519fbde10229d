"""Tests for mixture sampling, gradient clipping, Adam, and the train loop."""

import math

import numpy as np
import pytest

from chainpolicy import seeding
from chainpolicy.codec import SUP_NONE, encode_sample
from chainpolicy.errors import EmptyDataset, NonFiniteGradient, RangeError
from chainpolicy.model import ModelConfig, Params, init_params
from chainpolicy.train import (
    AdamState,
    MixtureSpec,
    TrainConfig,
    adam_step,
    clip_gradients,
    collate,
    init_adam,
    metrics_row,
    sample_batch,
    train_run,
)


@pytest.fixture(scope="module")
def encoded_robot(robot_samples, small_vocab):
    return tuple(encode_sample(s, small_vocab) for s in robot_samples)


@pytest.fixture(scope="module")
def encoded_human(human_samples, small_vocab):
    return tuple(encode_sample(s, small_vocab) for s in human_samples)


def components_total(row):
    total = 0.0
    for col in ("loss_action", "loss_reasoning", "loss_free"):
        if not math.isnan(row[col]):
            total += row[col]
    return total


class TestMixture:
    def test_ratio_bounds_checked(self, encoded_robot, encoded_human):
        with pytest.raises(RangeError):
            MixtureSpec(1.2, encoded_robot, encoded_human)
        with pytest.raises(RangeError):
            MixtureSpec(-0.1, encoded_robot, encoded_human)

    def test_empty_pools_rejected(self, encoded_robot, encoded_human):
        with pytest.raises(EmptyDataset):
            MixtureSpec(0.5, (), encoded_human)
        with pytest.raises(EmptyDataset):
            MixtureSpec(0.5, encoded_robot, ())
        MixtureSpec(0.0, encoded_robot, ())
        MixtureSpec(1.0, (), encoded_human)

    def test_draw_fractions_match_the_ratio(self, encoded_robot, encoded_human):
        mix = MixtureSpec(0.3, encoded_robot, encoded_human)
        rng = seeding.stream("mixture-check")
        batch = sample_batch(mix, 2000, rng)
        n_free = sum(1 for s in batch if s.source == "action_free")
        sigma = math.sqrt(2000 * 0.3 * 0.7)
        assert abs(n_free - 600) < 4 * sigma

    def test_extreme_ratios_use_one_pool(self, encoded_robot, encoded_human):
        rng = seeding.stream("edges")
        only_robot = sample_batch(MixtureSpec(0.0, encoded_robot, ()), 64, rng)
        assert all(s.source == "robot" for s in only_robot)
        only_free = sample_batch(MixtureSpec(1.0, (), encoded_human), 64, rng)
        assert all(s.source == "action_free" for s in only_free)


class TestCollate:
    def test_pads_to_longest(self, encoded_robot):
        batch = list(encoded_robot[:4])
        ids, targets, sup = collate(batch)
        width = max(len(s.ids) for s in batch)
        assert ids.shape == targets.shape == sup.shape == (4, width)
        for row, s in enumerate(batch):
            n = len(s.ids)
            assert np.array_equal(ids[row, :n], s.ids)
            assert np.array_equal(targets[row, :n], s.targets)
            assert np.array_equal(sup[row, :n], s.supervision)
            assert (ids[row, n:] == 0).all()
            assert (sup[row, n:] == SUP_NONE).all()

    def test_empty_batch_rejected(self):
        with pytest.raises(EmptyDataset):
            collate([])


class TestClip:
    def test_norm_computed_and_scaled(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        clipped, norm = clip_gradients(grads, 1.0)
        assert norm == 5.0
        assert np.allclose(clipped["a"], 0.6, rtol=1e-12)
        assert np.allclose(clipped["b"], 0.8, rtol=1e-12)

    def test_below_cap_untouched(self):
        grads = {"a": np.array([0.3, 0.4])}
        clipped, norm = clip_gradients(grads, 1.0)
        assert norm == 0.5
        assert clipped is grads

    def test_non_finite_raises(self):
        with pytest.raises(NonFiniteGradient):
            clip_gradients({"a": np.array([np.inf])}, 1.0)


class TestAdam:
    def test_first_step_matches_the_formula(self):
        config = TrainConfig(steps=1, lr=0.01)
        w = np.array([1.0, 2.0, -3.0])
        g = np.array([0.1, -0.2, 0.05])
        params = Params(config=None, arrays={"w": w.copy()})
        state = init_adam(params)
        adam_step(params, {"w": g}, state, config)
        expected = w - config.lr * g / (np.abs(g) + config.eps)
        assert np.allclose(params.arrays["w"], expected, rtol=1e-9)
        assert state.t == 1

    def test_moments_accumulate(self):
        config = TrainConfig(steps=1, lr=0.01)
        params = Params(config=None, arrays={"w": np.array([0.0])})
        state = init_adam(params)
        g = np.array([1.0])
        adam_step(params, {"w": g}, state, config)
        adam_step(params, {"w": g}, state, config)
        assert state.t == 2
        m_expected = 0.9 * 0.1 + 0.1  # two decayed accumulations of g=1
        assert np.allclose(state.m["w"], m_expected, rtol=1e-12)


class TestTrainRun:
    MODEL = None  # created lazily per vocabulary size

    def make_model(self, vocab):
        return ModelConfig(vocab_size=len(vocab), layers=1, heads=2,
                           width=32, context=160, seed=3)

    def test_deterministic(self, encoded_robot, encoded_human, small_vocab):
        mix = MixtureSpec(0.5, encoded_robot, encoded_human)
        config = TrainConfig(steps=5, batch=4, seed=7)
        a = train_run(mix, self.make_model(small_vocab), config)
        b = train_run(mix, self.make_model(small_vocab), config)
        assert [repr(r) for r in a.metrics] == [repr(r) for r in b.metrics]
        for name in a.params.arrays:
            assert np.array_equal(a.params.arrays[name], b.params.arrays[name])

    def test_components_sum_to_total(self, encoded_robot, encoded_human, small_vocab):
        mix = MixtureSpec(0.5, encoded_robot, encoded_human)
        config = TrainConfig(steps=8, batch=6, seed=1)
        result = train_run(mix, self.make_model(small_vocab), config)
        assert len(result.metrics) == 8
        for row in result.metrics:
            assert abs(row["loss_total"] - components_total(row)) <= 1e-9
            assert math.isfinite(row["grad_norm"])

    def test_pure_pools_leave_components_absent(self, encoded_robot, encoded_human,
                                                small_vocab):
        model = self.make_model(small_vocab)
        robot_only = train_run(MixtureSpec(0.0, encoded_robot, ()),
                               model, TrainConfig(steps=3, batch=4, seed=2))
        for row in robot_only.metrics:
            assert math.isnan(row["loss_free"])
            assert not math.isnan(row["loss_action"])
        free_only = train_run(MixtureSpec(1.0, (), encoded_human),
                              model, TrainConfig(steps=3, batch=4, seed=2))
        for row in free_only.metrics:
            assert math.isnan(row["loss_action"])
            assert math.isnan(row["loss_reasoning"])
            assert not math.isnan(row["loss_free"])

    def test_loss_decreases_on_a_small_pool(self, encoded_robot, small_vocab):
        mix = MixtureSpec(0.0, encoded_robot[:8], ())
        model = self.make_model(small_vocab)
        config = TrainConfig(steps=120, batch=8, lr=3e-3, seed=4)
        result = train_run(mix, model, config)
        first = np.mean([r["loss_total"] for r in result.metrics[:5]])
        last = np.mean([r["loss_total"] for r in result.metrics[-5:]])
        assert last < first * 0.2
        assert last < 0.5

    def test_config_validation(self):
        with pytest.raises(RangeError):
            TrainConfig(steps=0)
        with pytest.raises(RangeError):
            TrainConfig(steps=1, lr=-1.0)
        with pytest.raises(RangeError):
            TrainConfig(steps=1, snapshot_every=-1)

    def test_snapshots_fire_on_schedule(self, encoded_robot, small_vocab):
        mix = MixtureSpec(0.0, encoded_robot, ())
        config = TrainConfig(steps=7, batch=4, seed=2, snapshot_every=3)
        seen = []
        train_run(mix, self.make_model(small_vocab), config,
                  snapshot=lambda step, params: seen.append(
                      (step, params.arrays["tok_emb"].copy())))
        assert [s for s, _ in seen] == [3, 6]
        assert not np.array_equal(seen[0][1], seen[1][1])


class TestMetricsRow:
    def test_shared_denominator(self):
        stats = {"count": 10, "total_sum": 30.0, "action_sum": 5.0,
                 "reasoning_sum": 25.0, "free_sum": 0.0,
                 "action_count": 2, "reasoning_count": 8, "free_count": 0}
        row = metrics_row(3, stats, 0.7)
        assert row["step"] == 3
        assert row["loss_total"] == 3.0
        assert row["loss_action"] == 0.5
        assert row["loss_reasoning"] == 2.5
        assert math.isnan(row["loss_free"])
        assert row["grad_norm"] == 0.7
