import numpy as np
import pytest

from pings.rng import ALGORITHM, SeededRng


class TestStreams:
    def test_same_seed_and_name_repeat(self):
        a = SeededRng(42, "prior").normal((100, 3))
        b = SeededRng(42, "prior").normal((100, 3))
        np.testing.assert_array_equal(a, b)

    def test_names_give_distinct_streams(self):
        a = SeededRng(42, "prior").uniform(size=1000)
        b = SeededRng(42, "target").uniform(size=1000)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.1

    def test_child_is_deterministic(self):
        root = SeededRng(7, "timing")
        np.testing.assert_array_equal(root.child("run-0").uniform(size=5), SeededRng(7, "timing/run-0").uniform(size=5))

    def test_new_consumer_does_not_shift_other_streams(self):
        first = SeededRng(1, "init").uniform(size=4)
        SeededRng(1, "something-new").normal(1000)
        np.testing.assert_array_equal(first, SeededRng(1, "init").uniform(size=4))

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            SeededRng(-1)

    def test_algorithm_is_documented(self):
        assert ALGORITHM.startswith("philox")


class TestDistributions:
    def test_box_muller_moments(self):
        z = SeededRng(3, "bm").normal(200_000)
        assert abs(z.mean()) < 0.01
        assert abs(z.var() - 1.0) < 0.01
        assert abs(np.mean(z ** 4) - 3.0) < 0.05

    def test_normal_odd_count_and_shape(self):
        assert SeededRng(0).normal((3, 5)).shape == (3, 5)
        assert SeededRng(0).normal(7).shape == (7,)

    def test_uniform_range(self):
        u = SeededRng(0).uniform(2.0, 3.0, size=10_000)
        assert u.min() >= 2.0 and u.max() < 3.0

    def test_categorical_frequencies(self):
        k = SeededRng(5).categorical([0.5, 0.3, 0.2], 100_000)
        freq = np.bincount(k, minlength=3) / k.size
        np.testing.assert_allclose(freq, [0.5, 0.3, 0.2], atol=0.01)
        assert k.min() >= 0 and k.max() <= 2
