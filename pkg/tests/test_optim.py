import math

import numpy as np
import pytest

from pings.optim import (IMPROVEMENT_TOL, AdamState, EarlyStopper, LrSchedule, TrainingDivergence, adam_step,
                         early_stop_update, lr_at_epoch)


def reference_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar textbook Adam written out step by step."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


class TestAdam:
    def test_first_step_moves_by_lr(self):
        state = AdamState.zeros_like([np.zeros(3)])
        (p,) = adam_step([np.zeros(3)], [np.array([2.0, -0.5, 1e-3])], state, 0.01)
        np.testing.assert_allclose(p, [-0.01, 0.01, -0.01], rtol=1e-4)

    def test_matches_scalar_reference(self):
        grads = [0.3, -1.2, 0.7, 0.05, 2.0]
        state = AdamState.zeros_like([np.zeros(1)])
        p = [np.array([1.0])]
        for g in grads:
            p = adam_step(p, [np.array([g])], state, 1e-3)
        assert p[0][0] == pytest.approx(reference_adam(1.0, grads, 1e-3), abs=1e-15)

    def test_minimises_quadratic(self):
        p = [np.array([3.0, -2.0])]
        state = AdamState.zeros_like(p)
        for _ in range(3000):
            p = adam_step(p, [2 * p[0]], state, 1e-2)
        assert np.abs(p[0]).max() < 1e-2

    def test_non_finite_gradient(self):
        state = AdamState.zeros_like([np.zeros(2)])
        with pytest.raises(TrainingDivergence):
            adam_step([np.zeros(2)], [np.array([np.nan, 0.0])], state, 1e-3)

    def test_rejects_bad_lr(self):
        with pytest.raises(ValueError):
            adam_step([np.zeros(1)], [np.zeros(1)], AdamState.zeros_like([np.zeros(1)]), 0.0)


class TestSchedule:
    def test_stepped_decay(self):
        s = LrSchedule(1e-3, 0.99, 1000)
        assert lr_at_epoch(s, 0) == 1e-3
        assert lr_at_epoch(s, 999) == 1e-3
        assert lr_at_epoch(s, 1000) == pytest.approx(0.99e-3, rel=1e-15)
        assert lr_at_epoch(s, 19_999) == pytest.approx(1e-3 * 0.99 ** 19, rel=1e-14)

    def test_pings_schedule_barely_decays(self):
        assert lr_at_epoch(LrSchedule(), 19_999) == pytest.approx(1e-3 * 0.999 ** 19)

    @pytest.mark.parametrize("kw", [dict(gamma=0.0), dict(gamma=1.5), dict(interval=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            LrSchedule(**kw)


class TestEarlyStopping:
    def test_stops_after_patience_without_improvement(self):
        s = EarlyStopper(patience=3)
        assert early_stop_update(s, 1.0) == "continue"
        decisions = [early_stop_update(s, 1.0) for _ in range(4)]
        assert decisions == ["continue", "continue", "continue", "stop"]

    def test_improvement_resets_counter(self):
        s = EarlyStopper(patience=2)
        for loss in (5.0, 6.0, 6.0, 4.0, 6.0, 6.0):
            assert not s.update(loss)
        assert s.update(6.0)

    def test_tiny_improvement_does_not_count(self):
        s = EarlyStopper(patience=1)
        s.update(1.0)
        s.update(1.0 - IMPROVEMENT_TOL / 2)
        assert s.steps_since_best == 1

    def test_nan_stops_and_flags(self):
        s = EarlyStopper(patience=100)
        assert s.update(float("nan"))
        assert s.diverged
