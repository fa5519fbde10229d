"""Tests for the canonical file formats."""

import math

import numpy as np
import pytest

from chainpolicy.codec import build_vocab
from chainpolicy.errors import InvariantViolation, ParseError
from chainpolicy.model import ModelConfig, forward, init_params
from chainpolicy.records import (
    canonical_json,
    load_checkpoint,
    load_metrics,
    load_report,
    load_samples,
    load_trajectories,
    load_vocab,
    save_checkpoint,
    save_metrics,
    save_report,
    save_samples,
    save_trajectories,
    save_vocab,
)


class TestCanonicalJson:
    def test_sorted_keys_no_spaces(self):
        assert canonical_json({"b": 1, "a": [1.5, None]}) == '{"a":[1.5,null],"b":1}'

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            canonical_json({"x": float("nan")})

    def test_float_repr_round_trips(self):
        value = 0.1 + 0.2
        text = canonical_json({"v": value})
        import json
        assert json.loads(text)["v"] == value


class TestTrajectories:
    def test_round_trip_is_exact(self, tmp_path, put_on_traj, human_traj):
        path = tmp_path / "episodes.jsonl"
        save_trajectories(path, [put_on_traj, human_traj], meta={"note": "x"})
        loaded, meta = load_trajectories(path)
        assert meta == {"note": "x"}
        assert loaded[0] == put_on_traj
        assert loaded[1] == human_traj

    def test_write_is_byte_deterministic(self, tmp_path, put_on_traj):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_trajectories(a, [put_on_traj])
        save_trajectories(b, [put_on_traj])
        assert a.read_bytes() == b.read_bytes()

    def test_count_mismatch_detected(self, tmp_path, put_on_traj):
        path = tmp_path / "episodes.jsonl"
        save_trajectories(path, [put_on_traj])
        lines = path.read_text().splitlines()
        path.write_text("\n".join([lines[0], lines[1], lines[1]]) + "\n")
        with pytest.raises(ParseError):
            load_trajectories(path)

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "episodes.jsonl"
        path.write_text('{"kind":"samples","count":0,"meta":{}}\n')
        with pytest.raises(ParseError):
            load_trajectories(path)


class TestSamples:
    def test_round_trip_is_exact(self, tmp_path, robot_samples, human_samples):
        path = tmp_path / "samples.jsonl"
        both = list(robot_samples[:5]) + list(human_samples[:5])
        save_samples(path, both)
        loaded, meta = load_samples(path)
        assert meta == {}
        assert loaded == both

    def test_write_is_byte_deterministic(self, tmp_path, robot_samples):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_samples(a, list(robot_samples[:3]))
        save_samples(b, list(robot_samples[:3]))
        assert a.read_bytes() == b.read_bytes()


class TestCheckpoint:
    def test_round_trip_preserves_everything(self, tmp_path, robot_samples):
        vocab = build_vocab(robot_samples)
        config = ModelConfig(vocab_size=len(vocab), layers=1, heads=2,
                             width=8, context=32, seed=4)
        params = init_params(config)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, vocab, meta={"steps": 10})
        loaded, vocab2, meta = load_checkpoint(path)
        assert meta == {"steps": 10}
        assert vocab2 == vocab
        assert loaded.config == config
        assert sorted(loaded.arrays) == sorted(params.arrays)
        for name, arr in params.arrays.items():
            assert np.array_equal(loaded.arrays[name], arr)
            assert loaded.arrays[name].dtype == arr.dtype

    def test_loaded_model_forwards_identically(self, tmp_path, robot_samples):
        vocab = build_vocab(robot_samples)
        config = ModelConfig(vocab_size=len(vocab), layers=1, heads=2,
                             width=8, context=32, seed=4)
        params = init_params(config)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, vocab)
        loaded, _, _ = load_checkpoint(path)
        ids = np.arange(10, dtype=np.int32)
        assert np.array_equal(forward(params, ids).data,
                              forward(loaded, ids).data)

    def test_write_is_byte_deterministic(self, tmp_path, robot_samples):
        vocab = build_vocab(robot_samples)
        config = ModelConfig(vocab_size=len(vocab), layers=1, heads=2,
                             width=8, context=32, seed=4)
        params = init_params(config)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, params, vocab)
        save_checkpoint(b, params, vocab)
        assert a.read_bytes() == b.read_bytes()

    def test_corruption_is_detected(self, tmp_path, robot_samples):
        vocab = build_vocab(robot_samples)
        config = ModelConfig(vocab_size=len(vocab), layers=1, heads=2,
                             width=8, context=32, seed=4)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, init_params(config), vocab)
        raw = bytearray(path.read_bytes())
        raw[-1] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(InvariantViolation):
            load_checkpoint(path)


class TestVocabFile:
    def test_round_trip(self, tmp_path, small_vocab):
        path = tmp_path / "vocab.tsv"
        save_vocab(path, small_vocab)
        assert load_vocab(path) == small_vocab


class TestMetrics:
    def test_round_trip_with_nan(self, tmp_path):
        rows = [
            {"step": 0, "loss_total": 5.25, "loss_action": 1.125,
             "loss_reasoning": 4.125, "loss_free": float("nan"),
             "grad_norm": 0.75},
            {"step": 1, "loss_total": 5.0, "loss_action": float("nan"),
             "loss_reasoning": 4.0, "loss_free": 1.0, "grad_norm": 0.5},
        ]
        path = tmp_path / "metrics.csv"
        save_metrics(path, rows)
        loaded = load_metrics(path)
        assert len(loaded) == 2
        assert loaded[0]["loss_total"] == 5.25
        assert math.isnan(loaded[0]["loss_free"])
        assert math.isnan(loaded[1]["loss_action"])
        assert loaded[1]["grad_norm"] == 0.5

    def test_write_is_byte_deterministic(self, tmp_path):
        rows = [{"step": 0, "loss_total": 1 / 3, "loss_action": 2 / 3,
                 "loss_reasoning": 0.1, "loss_free": 0.2, "grad_norm": 0.3}]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        save_metrics(a, rows)
        save_metrics(b, rows)
        assert a.read_bytes() == b.read_bytes()
        assert load_metrics(a)[0]["loss_total"] == 1 / 3

    def test_header_checked(self, tmp_path):
        path = tmp_path / "metrics.csv"
        path.write_text("step,bogus\n0,1\n")
        with pytest.raises(ParseError):
            load_metrics(path)


class TestReport:
    def test_round_trip_scrubs_numpy_and_nan(self, tmp_path):
        report = {"mean": np.float64(0.5), "n": np.int64(4),
                  "rows": [("pick up the cup", 3, 1.0)],
                  "missing": float("nan")}
        path = tmp_path / "report.json"
        save_report(path, report)
        loaded = load_report(path)
        assert loaded["mean"] == 0.5
        assert loaded["n"] == 4
        assert loaded["rows"] == [["pick up the cup", 3, 1.0]]
        assert loaded["missing"] is None

    def test_write_is_byte_deterministic(self, tmp_path):
        report = {"b": 1.5, "a": {"z": [0.1, 0.2]}}
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_report(a, report)
        save_report(b, report)
        assert a.read_bytes() == b.read_bytes()
