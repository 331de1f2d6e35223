"""
Tests for the loss decomposition, the regularizer expectation and error metrics.
"""

import numpy as np
import pytest

from core.analysis import (IDENTITY_TOLERANCE, analytic_expected_regularizer, expected_regularizer,
                           loss_decomposition, regularizer_term, verify_decomposition)
from core.errors import ShapeError
from core.metrics import RunMetrics, error_rate, format_number, improvement


class TestLossDecomposition:
    """Tests for loss_decomposition and regularizer_term."""

    def test_worked_example(self):
        g = np.zeros((1, 2))
        z = np.array([[1.0, 2.0]])
        xi = np.array([[0.5, 0.5]])
        breakdown = loss_decomposition(g, z, xi, np.array([True]))
        assert breakdown.loss_clean == pytest.approx(2.5)
        assert breakdown.reg_term == pytest.approx(3.125)
        assert breakdown.loss_noisy == pytest.approx(5.625)
        assert abs(breakdown.residual) <= 1e-12

    def test_unselected_samples_add_nothing(self):
        rng = np.random.default_rng(0)
        g, z, xi = rng.normal(size=(3, 4, 5))
        assert regularizer_term(g, z, xi, np.zeros(4, dtype=bool)) == 0.0

    def test_cross_term_vanishes_when_student_matches_teacher(self):
        rng = np.random.default_rng(1)
        z, xi = rng.normal(size=(2, 6, 3))
        mask = np.ones(6, dtype=bool)
        expected = np.sum((xi * z) ** 2) / 12.0
        assert regularizer_term(z.copy(), z, xi, mask) == pytest.approx(expected)

    def test_batch_order_does_not_matter(self):
        rng = np.random.default_rng(2)
        g, z, xi = rng.normal(size=(3, 8, 10))
        mask = rng.random(8) < 0.5
        order = rng.permutation(8)
        first = loss_decomposition(g, z, xi, mask)
        second = loss_decomposition(g[order], z[order], xi[order], mask[order])
        assert first.loss_noisy == pytest.approx(second.loss_noisy)
        assert first.reg_term == pytest.approx(second.reg_term)

    def test_identity_holds_across_random_instances(self):
        report = verify_decomposition(trials=1000, seed=0)
        assert report['passed'] is True
        assert report['trials'] == 1000
        assert report['max_scaled_residual'] <= IDENTITY_TOLERANCE

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss_decomposition(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), np.ones(3, dtype=bool))


class TestExpectedRegularizer:
    """Monte Carlo and closed-form expectation of the regularizer."""

    def test_monte_carlo_matches_closed_form(self):
        z = np.array([[1.0, 2.0]])
        assert analytic_expected_regularizer(z, 0.5, 1.0) == pytest.approx(0.625)
        estimate = expected_regularizer(z, 0.5, 1.0, n_draws=400000, rng=np.random.default_rng(0))
        assert estimate == pytest.approx(0.625, rel=0.02)

    def test_scales_with_sigma_squared(self):
        z = np.random.default_rng(3).normal(size=(4, 10))
        base = analytic_expected_regularizer(z, 0.3, 0.5)
        assert analytic_expected_regularizer(z, 0.6, 0.5) == pytest.approx(4.0 * base)
        assert analytic_expected_regularizer(z, 0.3, 0.25) == pytest.approx(0.5 * base)

    @pytest.mark.parametrize("sigma", [0.2, 0.5, 1.0])
    @pytest.mark.parametrize("alpha", [0.15, 0.5, 0.8])
    def test_monte_carlo_scales_with_sigma_squared_and_alpha(self, sigma, alpha):
        z = np.array([[1.0, -2.0, 0.5], [0.3, 1.5, -1.0]])
        estimate = expected_regularizer(z, sigma, alpha, n_draws=200000, g=z,
                                        rng=np.random.default_rng(int(sigma * 1000 + alpha * 100)))
        unit = float(np.sum(z * z)) / (2.0 * len(z))
        assert estimate >= 0.0
        assert estimate / (sigma ** 2 * alpha) == pytest.approx(unit, rel=0.03)

    def test_zero_sigma(self):
        assert expected_regularizer(np.ones((2, 3)), 0.0, 1.0) == 0.0

    def test_needs_draws(self):
        with pytest.raises(ValueError):
            expected_regularizer(np.ones((1, 2)), 0.5, 1.0, n_draws=0)


class TestErrorMetrics:
    """Tests for error_rate, improvement and run metrics files."""

    def test_error_rate(self):
        logits = np.zeros((10000, 10))
        logits[:, 0] = 1.0
        labels = np.zeros(10000, dtype=np.int64)
        labels[:97] = 3
        assert error_rate(logits, labels) == 0.0097

    def test_ties_go_to_lowest_class(self):
        assert error_rate(np.zeros((2, 10)), np.array([0, 1])) == 0.5

    def test_empty_set(self):
        with pytest.raises(ValueError):
            error_rate(np.zeros((0, 10)), np.zeros(0))

    def test_improvement(self):
        assert 100 * improvement(0.0097, 0.0087) == pytest.approx(10.309, abs=1e-3)
        assert improvement(0.02, 0.02) == 0.0
        with pytest.raises(ValueError):
            improvement(0.0, 0.01)

    def test_format_number_round_trips(self):
        assert format_number(0.1) == "0.1"
        assert format_number(None) == ""
        assert format_number(np.int64(3)) == "3"
        assert float(format_number(1 / 3)) == 1 / 3

    def test_metrics_files(self, tmp_path):
        metrics = RunMetrics(tag="student", seed=4, baseline_error=0.02, test_error=0.015)
        metrics.record_epoch(1, 0.5, 0.03, True)
        metrics.record_epoch(2, 0.25, 0.04, False)
        metrics.best_epoch = 1
        metrics.best_val_error = 0.03
        lines = metrics.write_csv(tmp_path / "m.csv").read_text().splitlines()
        assert lines == ["seed,epoch,train_loss,val_error,test_error", "4,1,0.5,0.03,", "4,2,0.25,0.04,",
                         "4,final,0.5,0.03,0.015"]
        assert metrics.improvement_pct == pytest.approx(25.0)
        restored = RunMetrics.read_summary(metrics.write_summary(tmp_path / "m.json"))
        assert restored.test_error == 0.015 and restored.epochs_run == 2
