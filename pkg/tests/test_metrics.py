"""Angular error metrics against hand-computed angles."""

import math

import numpy as np
import pytest

from awbkit.autodiff import Tensor
from awbkit.exceptions import InvalidArgumentError
from awbkit.metrics import (
    ErrorStats,
    aggregate,
    angular_loss,
    recovery_angular_error,
    reproduction_angular_error,
    stats_csv_header,
    stats_csv_row,
)


class TestRecovery:
    def test_identical_vectors_exactly_zero(self):
        v = np.array([0.4, 0.8, 0.3])
        assert recovery_angular_error(v, v) == 0.0

    def test_orthogonal_is_ninety(self):
        assert recovery_angular_error([1, 0, 0], [0, 1, 0]) == pytest.approx(90.0, abs=1e-9)

    def test_known_forty_five(self):
        assert recovery_angular_error([1, 0, 0], [1, 1, 0]) == pytest.approx(45.0, abs=1e-9)

    def test_symmetric(self):
        a, b = np.array([0.2, 0.5, 0.9]), np.array([0.9, 0.1, 0.4])
        assert recovery_angular_error(a, b) == recovery_angular_error(b, a)

    def test_scale_invariant(self):
        a, b = np.array([0.3, 0.6, 0.2]), np.array([0.5, 0.5, 0.4])
        base = recovery_angular_error(a, b)
        assert recovery_angular_error(a, 7.3 * b) == pytest.approx(base, abs=1e-10)
        assert recovery_angular_error(0.002 * a, b) == pytest.approx(base, abs=1e-10)

    def test_zero_vector_rejected(self):
        with pytest.raises(InvalidArgumentError):
            recovery_angular_error([0, 0, 0], [1, 1, 1])

    def test_opposite_vectors_is_180(self):
        assert recovery_angular_error([1, 2, 3], [-1, -2, -3]) == pytest.approx(180.0)


class TestReproduction:
    def test_equal_vectors_exactly_zero(self):
        v = np.array([0.2, 0.9, 0.4])
        assert reproduction_angular_error(v, v) == 0.0

    def test_hand_computed_case(self):
        # gt (1,1,1), est (2,1,1): ratio (0.5,1,1);
        # cos = 2.5 / (sqrt(2.25) * sqrt(3))
        want = math.degrees(math.acos(2.5 / (math.sqrt(2.25) * math.sqrt(3.0))))
        got = reproduction_angular_error([1, 1, 1], [2, 1, 1])
        assert got == pytest.approx(want, abs=1e-9)

    def test_zero_estimate_component_rejected(self):
        with pytest.raises(InvalidArgumentError):
            reproduction_angular_error([1, 1, 1], [1, 0, 1])

    def test_scale_invariant(self):
        gt, est = np.array([0.4, 0.5, 0.6]), np.array([0.5, 0.4, 0.7])
        base = reproduction_angular_error(gt, est)
        assert reproduction_angular_error(gt * 3.1, est) == pytest.approx(base, abs=1e-10)
        assert reproduction_angular_error(gt, est * 0.25) == pytest.approx(base, abs=1e-10)


class TestAggregate:
    def test_four_values(self):
        s = aggregate([3.0, 1.0, 2.0, 4.0])
        assert s == ErrorStats(count=4, mean=2.5, median=2.0, best25=1.0, worst25=4.0)

    def test_singleton(self):
        s = aggregate([5.0])
        assert (s.mean, s.median, s.best25, s.worst25) == (5.0, 5.0, 5.0, 5.0)

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            aggregate([])

    def test_ordering_invariants_on_random_data(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s = aggregate(rng.exponential(2.0, size=rng.integers(1, 40)))
            assert s.best25 <= s.median <= s.worst25
            assert s.best25 <= s.mean <= s.worst25

    def test_median_is_lower_middle(self):
        assert aggregate([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).median == 3.0

    def test_quartile_size_is_ceil(self):
        # n=5 -> ceil(5/4)=2 elements in each tail
        s = aggregate([1.0, 2.0, 3.0, 4.0, 10.0])
        assert s.best25 == 1.5
        assert s.worst25 == 7.0


class TestCsv:
    def test_header_and_row_roundtrip(self):
        s = aggregate([0.1234567890123, 2.5, 3.75])
        row = stats_csv_row("camA", s, "recovery")
        cols = row.split(",")
        header = stats_csv_header().split(",")
        assert header == ["camera_id", "n", "mean", "median", "best25", "worst25", "metric"]
        assert cols[0] == "camA" and cols[-1] == "recovery"
        assert int(cols[1]) == 3
        assert float(cols[2]) == s.mean  # full precision round trip
        assert float(cols[3]) == s.median


class TestLoss:
    def test_loss_matches_metric_away_from_zero(self):
        gt = np.array([0.3, 0.8, 0.5])
        pred = np.array([0.5, 0.5, 0.5])
        loss = angular_loss(gt, Tensor(pred, dtype=np.float64))
        want = recovery_angular_error(gt, pred)
        assert math.degrees(loss.item()) == pytest.approx(want, abs=1e-6)

    def test_loss_at_zero_error_is_clamp_angle(self):
        gt = np.array([1.0, 1.0, 1.0])
        loss = angular_loss(gt, Tensor(gt, dtype=np.float64))
        assert loss.item() == pytest.approx(math.acos(1 - 1e-7), rel=1e-6)

    def test_loss_gradient_matches_finite_differences(self):
        from awbkit.autodiff import gradcheck

        gt = np.array([0.2, 0.7, 0.68])
        pred = Tensor(np.array([0.55, 0.5, 0.45]), dtype=np.float64, requires_grad=True)
        ok, worst = gradcheck(lambda: angular_loss(gt, pred), [pred], h=1e-6, rtol=1e-6, atol=1e-10)
        assert ok, worst

    def test_loss_decreases_toward_alignment(self):
        gt = np.array([0.4, 0.5, 0.6])
        far = angular_loss(gt, Tensor([0.9, 0.1, 0.2], dtype=np.float64)).item()
        near = angular_loss(gt, Tensor([0.42, 0.5, 0.58], dtype=np.float64)).item()
        assert near < far
