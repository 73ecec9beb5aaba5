import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pings import autodiff as ad
from pings.gmm import DEFAULT_GMM
from pings.metrics import (DEFAULT_BANK, KernelBank, kernel, mmd2_on_tape, mmd2_unbiased, mmd2_with_grads,
                           mode_coverage, moment_loss, moment_loss_on_tape, moment_summary, evaluation_report)
from pings.rng import SeededRng

from helpers import naive_mmd2


class TestKernel:
    def test_identical_points(self):
        assert kernel(np.ones(3), np.ones(3)) == 5.0

    def test_far_apart(self):
        assert kernel(np.zeros(3), np.full(3, 1e3)) == 0.0

    def test_hand_value(self):
        expected = sum(np.exp(-0.005 / s ** 2) for s in (0.1, 0.2, 0.5, 1.0, 2.0))
        assert kernel(np.zeros(3), np.array([0.1, 0.0, 0.0])) == pytest.approx(expected, abs=1e-15)

    def test_bank_validation(self):
        with pytest.raises(ValueError):
            KernelBank((0.1, -1.0))

    def test_evaluation_plan_squares_power_of_two_bandwidths(self):
        coefs, base, nsq = DEFAULT_BANK.evaluation_plan()
        np.testing.assert_allclose(coefs, [0.125, 0.5, 2.0, 12.5, 50.0])
        assert (base < 0).sum() == 2
        for k in np.flatnonzero(base >= 0):
            assert coefs[base[k]] * 2.0 ** nsq[k] == pytest.approx(coefs[k], rel=1e-15)


class TestMmdOracle:
    def test_two_by_two_hand_picked(self):
        A = np.array([[0.0, 0.0, 0.0], [0.3, -0.1, 0.2]])
        B = np.array([[0.1, 0.1, 0.1], [1.0, 0.0, -0.5]])
        assert mmd2_unbiased(A, B) == pytest.approx(naive_mmd2(A, B), abs=1e-12)

    def test_identical_multisets_reduce_algebraically(self):
        A = SeededRng(1).normal((12, 3))
        m = A.shape[0]
        s_off = sum(kernel(A[i], A[j]) for i in range(m) for j in range(m) if i != j)
        expected = 2 * s_off / (m * (m - 1)) - 2 * (s_off + 5 * m) / m ** 2
        assert mmd2_unbiased(A, A.copy()) == pytest.approx(expected, abs=1e-12)

    def test_separated_clusters(self):
        A = SeededRng(2).normal((10, 3)) * 1e-4
        B = A + 100.0
        v = mmd2_unbiased(A, B)
        assert v == pytest.approx(naive_mmd2(A, B), abs=1e-12)
        assert v == pytest.approx(10.0, abs=1e-2)

    @settings(max_examples=40, deadline=None)
    @given(m=st.integers(2, 64), n=st.integers(2, 64), shift=st.floats(-3, 3), seed=st.integers(0, 2 ** 31))
    def test_matches_double_loop(self, m, n, shift, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(m, 3))
        B = rng.normal(size=(n, 3)) * 1.3 + shift
        assert abs(mmd2_unbiased(A, B) - naive_mmd2(A, B)) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(m=st.integers(2, 64), n=st.integers(2, 64), seed=st.integers(0, 2 ** 31))
    def test_symmetry_and_permutation_exact(self, m, n, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(m, 3))
        B = rng.normal(size=(n, 3)) + 0.5
        v = mmd2_unbiased(A, B)
        assert mmd2_unbiased(B, A) == v
        assert mmd2_unbiased(A[rng.permutation(m)], B[rng.permutation(n)]) == v

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            mmd2_unbiased(np.zeros((1, 3)), np.zeros((5, 3)))

    def test_null_distribution_centred(self):
        vals = [mmd2_unbiased(SeededRng(i, "a").normal((512, 3)), SeededRng(i, "b").normal((512, 3)))
                for i in range(100)]
        se = np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert abs(np.mean(vals)) <= 3 * se


class TestMmdGradients:
    def test_finite_difference(self):
        rng = np.random.default_rng(5)
        A = rng.normal(size=(9, 3))
        B = rng.normal(size=(7, 3)) + 0.3
        _, ga, gb = mmd2_with_grads(A, B, DEFAULT_BANK, True, True)
        h = 1e-6
        for X, G, first in ((A, ga, True), (B, gb, False)):
            for i in range(X.shape[0]):
                for c in range(3):
                    Xp, Xm = X.copy(), X.copy()
                    Xp[i, c] += h
                    Xm[i, c] -= h
                    fp = mmd2_unbiased(Xp, B) if first else mmd2_unbiased(A, Xp)
                    fm = mmd2_unbiased(Xm, B) if first else mmd2_unbiased(A, Xm)
                    assert G[i, c] == pytest.approx((fp - fm) / (2 * h), abs=1e-8)

    def test_on_tape(self):
        rng = np.random.default_rng(6)
        A = rng.normal(size=(8, 3))
        B = rng.normal(size=(8, 3))
        tape = ad.Tape()
        a = tape.param("a", A)
        loss = mmd2_on_tape(a, tape.const(B))
        g = tape.backward(loss * 3.0)
        np.testing.assert_allclose(g["a"], 3.0 * mmd2_with_grads(A, B)[1], rtol=1e-14)


class TestMoments:
    def test_identical_rows(self):
        s = moment_summary(np.tile([1.0, 2.0, 3.0], (10, 1)))
        np.testing.assert_array_equal(s.covariance, np.zeros((3, 3)))
        assert not s.defined.any()
        assert np.isnan(s.skewness).all() and np.isnan(s.excess_kurtosis).all()

    def test_two_point_sample(self):
        s = moment_summary(np.array([[-1.0] * 3, [1.0] * 3]))
        np.testing.assert_array_equal(s.mean, np.zeros(3))
        np.testing.assert_allclose(np.diag(s.covariance), 1.0)
        np.testing.assert_allclose(s.skewness, 0.0, atol=1e-15)
        np.testing.assert_allclose(s.excess_kurtosis, -2.0)

    def test_gaussian_monte_carlo(self):
        s = moment_summary(SeededRng(8).normal((100_000, 3)))
        assert np.abs(s.skewness).max() < 0.05
        assert np.abs(s.excess_kurtosis).max() < 0.1

    def test_moment_loss_values(self):
        A = SeededRng(3).normal((50, 3))
        assert moment_loss(A, A) == 0.0
        assert moment_loss(A + [1.0, 0.0, 0.0], A) == pytest.approx(1.0, abs=1e-12)

    def test_moment_loss_loop_oracle(self):
        rng = np.random.default_rng(10)
        A, B = rng.normal(size=(30, 3)), rng.normal(size=(20, 3)) * 2
        ma, mb = A.mean(0), B.mean(0)
        total = sum((ma[i] - mb[i]) ** 2 for i in range(3))
        for i in range(3):
            for j in range(3):
                ca = sum((a[i] - ma[i]) * (a[j] - ma[j]) for a in A) / len(A)
                cb = sum((b[i] - mb[i]) * (b[j] - mb[j]) for b in B) / len(B)
                total += (ca - cb) ** 2
        assert moment_loss(A, B) == pytest.approx(total, abs=1e-12)

    def test_moment_loss_gradient(self):
        rng = np.random.default_rng(11)
        A, B = rng.normal(size=(6, 3)), rng.normal(size=(5, 3))
        tape = ad.Tape()
        g = tape.backward(moment_loss_on_tape(tape.param("a", A), tape.const(B)))["a"]
        fd = ad.finite_difference_gradient(lambda X: moment_loss(X, B), A, 1e-6)
        np.testing.assert_allclose(g, fd, atol=1e-8)


class TestReport:
    def test_self_comparison(self):
        X = SeededRng(1).normal((300, 3))
        r = evaluation_report(X, X)
        assert r["mean_mse"] == r["cov_mse"] == r["skew_mse"] == r["kurt_mse"] == 0.0

    def test_sum_of_squares_convention(self):
        X = SeededRng(2).normal((400, 3))
        r = evaluation_report(X + np.array([3.0, 4.0, 0.0]), X)
        assert r["mean_mse"] == pytest.approx(25.0, abs=1e-10)
        assert r["cov_mse"] == pytest.approx(0.0, abs=1e-20)

    def test_mode_coverage(self):
        x = np.vstack([DEFAULT_GMM.means, [[50.0, 50.0, 50.0]]])
        cov = mode_coverage(x, DEFAULT_GMM)
        np.testing.assert_allclose(cov, [0.25, 0.25, 0.25])
