"""
Tests for teacher training, the shared fit loop and the logit cache.
"""

import numpy as np
import pytest

from core.arch_dsl import parse_arch
from core.datasets import LabeledSet, SplitConfig, split_validation
from core.errors import (CountMismatchError, DivergenceError, FormatError, MissingLogitsError, ShapeError,
                         TruncationError)
from core.metrics import RunMetrics, evaluate
from core.teacher import (HEADER, LogitRecordSet, compute_logits, decode_logits, encode_logits, export_logits,
                          load_logits, teacher_tag_for, train_teacher, write_logits)
from core.tensor_engine import init_params
from core.training import TrainConfig, fit, make_streams

from tests.conftest import TINY_TEACHER


@pytest.fixture
def records():
    rng = np.random.default_rng(0)
    return LogitRecordSet(10, [5, 2, 9], rng.normal(size=(3, 10)), [1, 0, 7], "tiny-teacher")


class TestLogitCache:
    """Tests for the NLGT encoding."""

    def test_round_trip(self, records, tmp_path):
        path = tmp_path / "cache" / "teacher.nlgt"
        write_logits(records, path)
        loaded = load_logits(path)
        np.testing.assert_array_equal(loaded.sample_ids, [5, 2, 9])
        np.testing.assert_array_equal(loaded.logits, records.logits)
        np.testing.assert_array_equal(loaded.hard_labels, [1, 0, 7])
        assert loaded.tag == "tiny-teacher"
        assert encode_logits(loaded) == path.read_bytes()

    def test_record_size(self, records):
        assert len(encode_logits(records)) == HEADER.size + 3 * (8 + 80 + 1)

    def test_bad_magic(self, records):
        with pytest.raises(FormatError):
            decode_logits(b"NTCK" + encode_logits(records)[4:])

    def test_short_header(self):
        with pytest.raises(TruncationError):
            decode_logits(b"NLGT\x01")

    def test_truncated_records(self, records):
        with pytest.raises(TruncationError):
            decode_logits(encode_logits(records)[:-5])

    def test_trailing_bytes(self, records):
        with pytest.raises(FormatError):
            decode_logits(encode_logits(records) + b"\x00")

    def test_empty_cache(self):
        empty = LogitRecordSet(10, [], np.zeros((0, 10)), [])
        assert len(decode_logits(encode_logits(empty))) == 0

    def test_logits_follow_requested_order(self, records):
        np.testing.assert_array_equal(records.logits_for(np.array([9, 5])), records.logits[[2, 0]])

    def test_missing_sample(self, records):
        with pytest.raises(MissingLogitsError) as info:
            records.logits_for(np.array([5, 4]))
        assert "4" in str(info.value)

    def test_duplicate_sample_ids(self):
        with pytest.raises(FormatError):
            LogitRecordSet(2, [1, 1], np.zeros((2, 2)), [0, 1])

    def test_label_count(self):
        with pytest.raises(CountMismatchError):
            LogitRecordSet(2, [1, 2], np.zeros((2, 2)), [0])

    def test_long_tag_is_cut(self):
        assert len(LogitRecordSet(2, [], np.zeros((0, 2)), [], "x" * 40).teacher_tag) == 32

    def test_tag_names_layers_and_seed(self):
        assert teacher_tag_for(parse_arch(TINY_TEACHER), 3) == "3L-seed3"


class TestTeacherTraining:
    """Tests for train_teacher and export_logits."""

    def test_training_reduces_loss(self, tiny_set):
        train, validation = split_validation(tiny_set, SplitConfig(validation_count=10, split_seed=1))
        cfg = TrainConfig(epochs=4, patience=10, batch_size=8, learning_rate=0.01)
        params, metrics = train_teacher(parse_arch(TINY_TEACHER), train, validation, cfg, seed=0, progress=False)
        losses = [row['train_loss'] for row in metrics.epochs]
        assert metrics.epochs_run == 4
        assert losses[-1] < losses[0]
        assert 1 <= metrics.best_epoch <= 4
        assert params.weights[0].shape == (4, 1, 3, 3)

    def test_same_seed_same_weights(self, tiny_set):
        train, validation = split_validation(tiny_set, SplitConfig(validation_count=10))
        cfg = TrainConfig(epochs=1, batch_size=8)
        first, _ = train_teacher(parse_arch(TINY_TEACHER), train, validation, cfg, seed=2, progress=False)
        second, _ = train_teacher(parse_arch(TINY_TEACHER), train, validation, cfg, seed=2, progress=False)
        for a, b in zip(first.tensors(), second.tensors()):
            np.testing.assert_array_equal(a, b)

    def test_separable_two_class_set_reaches_zero_training_error(self):
        rng = np.random.default_rng(5)
        labels = np.arange(32) % 2
        images = rng.uniform(0.0, 0.1, size=(32, 1, 8, 8))
        images[labels == 0, :, :, :4] += 0.9
        images[labels == 1, :, :, 4:] += 0.9
        train = LabeledSet(images, labels, "halves")
        cfg = TrainConfig(epochs=30, patience=30, batch_size=8, learning_rate=0.05)
        spec = parse_arch("FC2")
        params, metrics = train_teacher(spec, train, train.subset([]), cfg, seed=0, progress=False)
        assert metrics.epochs_run == 30
        assert evaluate(params, spec, train) == 0.0

    def test_too_few_classes(self, tiny_set):
        with pytest.raises(ShapeError):
            train_teacher(parse_arch("FC4-FC5"), tiny_set, tiny_set.subset([]), TrainConfig(epochs=1), 0, False)

    def test_export_covers_every_sample(self, tiny_set, tmp_path):
        spec = parse_arch(TINY_TEACHER)
        params = init_params(spec, (8, 8, 1), np.random.default_rng(0))
        exported = export_logits(params, spec, tiny_set, tmp_path / "t.nlgt", "tag")
        loaded = load_logits(tmp_path / "t.nlgt")
        assert len(loaded) == 40
        np.testing.assert_array_equal(loaded.logits, exported.logits)
        np.testing.assert_array_equal(loaded.hard_labels, tiny_set.labels)
        np.testing.assert_allclose(compute_logits(params, spec, tiny_set).logits, exported.logits)


class TestFit:
    """Early stopping and divergence in the shared loop."""

    @staticmethod
    def frozen_step(params):
        def step(current, indices):
            return 1.0, current.zeros_like()
        return step

    def test_stops_after_patience(self, tiny_set):
        spec = parse_arch("FC4-FC10")
        params = init_params(spec, (8, 8, 1), np.random.default_rng(0))
        metrics = RunMetrics(tag="fit", seed=0)
        fit(spec, params, tiny_set, tiny_set.subset(np.arange(10)), TrainConfig(epochs=9, patience=2),
            make_streams(0), self.frozen_step(params), metrics, progress=False)
        assert metrics.epochs_run == 2
        assert metrics.log_entries[-1]['early_stop'] is True
        assert metrics.best_epoch == 0

    def test_without_validation_last_epoch_is_best(self, tiny_set):
        spec = parse_arch("FC4-FC10")
        params = init_params(spec, (8, 8, 1), np.random.default_rng(0))
        metrics = RunMetrics(tag="fit", seed=0)
        fit(spec, params, tiny_set, tiny_set.subset([]), TrainConfig(epochs=3), make_streams(0),
            self.frozen_step(params), metrics, progress=False)
        assert metrics.best_epoch == 3
        assert metrics.best_val_error is None

    def test_non_finite_loss(self, tiny_set):
        spec = parse_arch("FC4-FC10")
        params = init_params(spec, (8, 8, 1), np.random.default_rng(0))

        def diverging(current, indices):
            return float("nan"), current.zeros_like()

        with pytest.raises(DivergenceError) as info:
            fit(spec, params, tiny_set, tiny_set.subset([]), TrainConfig(epochs=1), make_streams(0),
                diverging, RunMetrics(tag="fit", seed=0), progress=False)
        assert "epoch 1, batch 0" in str(info.value)

    def test_streams_are_independent(self):
        first, second = make_streams(5), make_streams(5)
        first.noise.standard_normal(100)
        assert first.mask.random() == second.mask.random()


class TestLabeledSet:
    def test_count_mismatch(self):
        with pytest.raises(CountMismatchError):
            LabeledSet(np.zeros((2, 1, 2, 2)), [0], "broken")
