"""Sample-set comparison: multi-bandwidth MMD^2, moment loss and the
summary statistics reported for generated batches."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import autodiff
from .gmm import GmmSpec

DEFAULT_BANDWIDTHS = (0.1, 0.2, 0.5, 1.0, 2.0)


@dataclass(frozen=True)
class KernelBank:
    bandwidths: tuple[float, ...] = DEFAULT_BANDWIDTHS

    def __post_init__(self):
        bw = tuple(float(s) for s in self.bandwidths)
        if not bw or any(s <= 0 for s in bw):
            raise ValueError("bandwidths must be a nonempty set of positive numbers")
        object.__setattr__(self, "bandwidths", bw)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([1.0 / (2.0 * s * s) for s in self.bandwidths])

    def evaluation_plan(self):
        """How each exponential is obtained during pair sums.

        exp(-c d)^(2^p) = exp(-2^p c d), so a bandwidth whose coefficient is a
        power-of-two multiple of an earlier one is derived by squaring.  For
        the default bank only two of the five exponentials are evaluated.
        Returns (coefs, base, squarings); base = -1 marks direct evaluation.
        """
        coefs = np.sort(self.coefficients)
        base = np.full(coefs.size, -1, dtype=np.int64)
        nsq = np.zeros(coefs.size, dtype=np.int64)
        for k in range(coefs.size):
            for j in range(k - 1, -1, -1):
                ratio = coefs[k] / coefs[j]
                p = round(math.log2(ratio)) if ratio > 1 else 0
                if 1 <= p <= 6 and abs(ratio - 2.0 ** p) <= 1e-12 * ratio:
                    base[k], nsq[k] = j, p
                    break
        return coefs, base, nsq


DEFAULT_BANK = KernelBank()


def kernel(u, v, bank: KernelBank = DEFAULT_BANK) -> float:
    d = float(np.sum((np.asarray(u, dtype=float) - np.asarray(v, dtype=float)) ** 2))
    return float(sum(math.exp(-d / (2.0 * s * s)) for s in bank.bandwidths))


# Pair sums are the hot loop of training.  numba has no vector exp here, so
# exp is evaluated with a Cody-Waite reduction and a degree-13 polynomial that
# the compiler can vectorise; relative error stays within a few ulp.  Inputs
# below -708 return exactly 0 (never a subnormal) to avoid slow FP assists.
_JIT = dict(cache=True, fastmath={"contract"}, error_model="numpy")
# reductions may be reordered (vectorised); the exp kernel itself may not
_JIT_REDUCE = dict(cache=True, fastmath={"contract", "reassoc"}, error_model="numpy")
_LOG2E = 1.4426950408889634
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_ROUND = 6755399441055744.0  # 1.5 * 2**52
_ROUND_BITS = int(np.array([_ROUND]).view(np.int64)[0])
_EXP_FLOOR = -708.0


@numba.njit(**_JIT)
def _exp_neg_scaled(dist, c, L, out, scratch):
    """out[j] = exp(-c dist[j]) over the first L entries; 0 below e^-708."""
    for j in range(L):
        xc = max(-c * dist[j], _EXP_FLOOR)
        t = xc * _LOG2E + _ROUND
        scratch[j] = t
        k = t - _ROUND
        r = (xc - k * _LN2_HI) - k * _LN2_LO
        p = 1.0 / 6227020800.0
        p = p * r + 1.0 / 479001600.0
        p = p * r + 1.0 / 39916800.0
        p = p * r + 1.0 / 3628800.0
        p = p * r + 1.0 / 362880.0
        p = p * r + 1.0 / 40320.0
        p = p * r + 1.0 / 5040.0
        p = p * r + 1.0 / 720.0
        p = p * r + 1.0 / 120.0
        p = p * r + 1.0 / 24.0
        p = p * r + 1.0 / 6.0
        p = p * r + 0.5
        p = p * r + 1.0
        p = p * r + 1.0
        out[j] = p
    bits = scratch.view(np.int64)
    for j in range(L):
        bits[j] = (bits[j] - _ROUND_BITS + 1023) << 52
    for j in range(L):
        v = out[j] * scratch[j]
        out[j] = v if -c * dist[j] >= _EXP_FLOOR else 0.0


_SQUARE_FLOOR = 1.4916681462400413e-154  # sqrt of the smallest normal double


@numba.njit(**_JIT)
def _square_into(src, L, nsq, out):
    """out = src ** (2 ** nsq), flushing to 0 instead of going subnormal."""
    for j in range(L):
        out[j] = src[j]
    for _ in range(nsq):
        for j in range(L):
            v = out[j]
            v = v if v >= _SQUARE_FLOOR else 0.0
            out[j] = v * v


@numba.njit(**_JIT)
def _row_kernel(a, Bt, start, coefs, base, nsq, dist, ex, scratch, kval, dk):
    """Kernel values and d k / d(dist) between point a and columns start.. of Bt.

    Fills kval[:L] and dk[:L]; Bt is (dim, n) so inner loops are contiguous.
    ex is a (n_bandwidths, n) work buffer.
    """
    dim, n = Bt.shape
    L = n - start
    for j in range(L):
        dist[j] = 0.0
        kval[j] = 0.0
        dk[j] = 0.0
    for c in range(dim):
        ac = a[c]
        row = Bt[c]
        for j in range(L):
            diff = ac - row[start + j]
            dist[j] += diff * diff
    for q in range(coefs.shape[0]):
        e = ex[q]
        if base[q] < 0:
            _exp_neg_scaled(dist, coefs[q], L, e, scratch)
        else:
            _square_into(ex[base[q]], L, nsq[q], e)
        cq = coefs[q]
        for j in range(L):
            kval[j] += e[j]
            dk[j] -= cq * e[j]
    return L


@numba.njit(**_JIT_REDUCE)
def _pair_sum(A, Bt, coefs, base, nsq, self_pairs, want_grad):
    """sum of k(a_i, b_j) over all (i, j), or over i < j when self_pairs
    (then Bt is A transposed).  The gradient is taken w.r.t. A (for
    self_pairs, w.r.t. the shared points)."""
    m, dim = A.shape
    n = Bt.shape[1]
    dist = np.empty(n)
    ex = np.empty((coefs.shape[0], n))
    scratch = np.empty(n)
    kval = np.empty(n)
    dk = np.empty(n)
    grad = np.zeros((m if want_grad else 0, dim))
    total = 0.0
    for i in range(m):
        start = i + 1 if self_pairs else 0
        if start >= n:
            continue
        L = _row_kernel(A[i], Bt, start, coefs, base, nsq, dist, ex, scratch, kval, dk)
        row = 0.0
        for j in range(L):
            row += kval[j]
        total += row
        if want_grad:
            for c in range(dim):
                ac = A[i, c]
                col = Bt[c]
                acc = 0.0
                for j in range(L):
                    w = 2.0 * dk[j] * (ac - col[start + j])
                    acc += w
                    if self_pairs:
                        grad[start + j, c] -= w
                grad[i, c] += acc
    return total, grad


def _self_sum(X, plan, want_grad):
    return _pair_sum(X, np.ascontiguousarray(X.T), *plan, True, want_grad)


def _cross_sum(A, B, plan, want_grad):
    return _pair_sum(A, np.ascontiguousarray(B.T), *plan, False, want_grad)


def _check_pair(A, B):
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"expected two (n, d) batches with equal d, got {A.shape} and {B.shape}")
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise ValueError("the unbiased MMD needs at least two points per batch")
    return A, B


def _canonical(X):
    """Row order used for all reductions: lexicographic on coordinates."""
    order = np.lexsort(X.T[::-1])
    return np.ascontiguousarray(X[order]), order


def _unsort(g, order):
    out = np.empty_like(g)
    out[order] = g
    return out


def mmd2_with_grads(A, B, bank: KernelBank = DEFAULT_BANK, grad_a: bool = True, grad_b: bool = False):
    """Unbiased MMD^2 plus gradients w.r.t. A and B (None when not requested).

    Pair sums run over rows in a canonical (sorted) order and the cross term
    is always accumulated from the same side, so the result is bit-identical
    under row permutations and under swapping A and B.
    """
    A, B = _check_pair(A, B)
    m, n = A.shape[0], B.shape[0]
    plan = bank.evaluation_plan()
    As, a_order = _canonical(A)
    Bs, b_order = _canonical(B)
    saa, gaa = _self_sum(As, plan, grad_a)
    sbb, gbb = _self_sum(Bs, plan, grad_b)
    a_first = (m, As.tobytes()) <= (n, Bs.tobytes())
    if a_first:
        sab, gab = _cross_sum(As, Bs, plan, grad_a)
        gba = _cross_sum(Bs, As, plan, True)[1] if grad_b else None
    else:
        sab, gba = _cross_sum(Bs, As, plan, grad_b)
        gab = _cross_sum(As, Bs, plan, True)[1] if grad_a else None
    c_aa = 2.0 / (m * (m - 1))
    c_bb = 2.0 / (n * (n - 1))
    c_ab = 2.0 / (m * n)
    value = (c_aa * saa + c_bb * sbb) - c_ab * sab
    ga = _unsort(c_aa * gaa - c_ab * gab, a_order) if grad_a else None
    gb = _unsort(c_bb * gbb - c_ab * gba, b_order) if grad_b else None
    return float(value), ga, gb


def mmd2_unbiased(A, B, bank: KernelBank = DEFAULT_BANK) -> float:
    """Unbiased squared MMD with the summed Gaussian kernel; may be negative."""
    return mmd2_with_grads(A, B, bank, grad_a=False)[0]


def _mmd_fwd(a, b, bank, needs_b):
    value, ga, gb = mmd2_with_grads(a, b, bank, grad_a=True, grad_b=needs_b)
    return np.asarray(value), (ga, gb)


def _mmd_vjp(g, ins, out, cache, needs, bank, needs_b):
    ga, gb = cache
    return (g * ga if needs[0] else None, g * gb if needs[1] and gb is not None else None)


autodiff.register_op("mmd2", _mmd_fwd, _mmd_vjp)


def mmd2_on_tape(a: autodiff.Var, b: autodiff.Var, bank: KernelBank = DEFAULT_BANK) -> autodiff.Var:
    needs_b = a.tape.nodes[b.index].requires_grad
    return a.tape.apply("mmd2", a, b, bank=bank, needs_b=needs_b)


# ---------------------------------------------------------------------------
# moments


@dataclass
class MomentSummary:
    mean: np.ndarray
    covariance: np.ndarray
    skewness: np.ndarray         # NaN where undefined
    excess_kurtosis: np.ndarray  # NaN where undefined
    defined: np.ndarray          # per-dimension: variance is nonzero


def moment_summary(X) -> MomentSummary:
    """Population (1/n) moments; skewness and excess kurtosis per dimension."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need an (n, d) batch with n >= 2")
    n = X.shape[0]
    mu = X.mean(axis=0)
    c = X - mu
    cov = c.T @ c / n
    cov = 0.5 * (cov + cov.T)
    m2 = (c ** 2).mean(axis=0)
    m3 = (c ** 3).mean(axis=0)
    m4 = (c ** 4).mean(axis=0)
    scale = np.maximum(1.0, np.abs(mu))
    defined = m2 > (1e-12 * scale) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.where(defined, m3 / m2 ** 1.5, np.nan)
        kurt = np.where(defined, m4 / m2 ** 2 - 3.0, np.nan)
    return MomentSummary(mu, cov, skew, kurt, defined)


def _mean_cov(X):
    mu = X.mean(axis=0)
    c = X - mu
    return mu, c, c.T @ c / X.shape[0]


def moment_loss(A, B) -> float:
    """||mean_A - mean_B||^2 + ||cov_A - cov_B||_F^2 (population covariances)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise ValueError("moment loss needs at least two points per batch")
    ma, _, ca = _mean_cov(A)
    mb, _, cb = _mean_cov(B)
    return float(np.sum((ma - mb) ** 2) + np.sum((ca - cb) ** 2))


def _moment_fwd(a, b):
    ma, ca_c, ca = _mean_cov(a)
    mb, cb_c, cb = _mean_cov(b)
    dm = ma - mb
    dc = ca - cb
    value = np.asarray(np.sum(dm ** 2) + np.sum(dc ** 2))
    return value, (dm, dc, ca_c, cb_c)


def _moment_vjp(g, ins, out, cache, needs):
    dm, dc, ca_c, cb_c = cache
    na, nb = ins[0].shape[0], ins[1].shape[0]
    # the mean's contribution through the centring cancels because sum(c) = 0
    ga = g * (2.0 * dm / na + 4.0 / na * ca_c @ dc) if needs[0] else None
    gb = g * (-2.0 * dm / nb - 4.0 / nb * cb_c @ dc) if needs[1] else None
    return ga, gb


autodiff.register_op("moment_loss", _moment_fwd, _moment_vjp)


def moment_loss_on_tape(a: autodiff.Var, b: autodiff.Var) -> autodiff.Var:
    return a.tape.apply("moment_loss", a, b)


def evaluation_report(generated, target, bank: KernelBank = DEFAULT_BANK) -> dict[str, float]:
    """Distribution-level errors of ``generated`` against ``target``.

    Error terms are sums of squared componentwise differences: ``mean_mse``
    over the 3 mean components, ``cov_mse`` over the 9 covariance entries,
    ``skew_mse`` and ``kurt_mse`` over the per-dimension marginals.  Undefined
    skewness or kurtosis makes the corresponding entry NaN.
    """
    g = moment_summary(generated)
    t = moment_summary(target)
    return {
        "mmd2": mmd2_unbiased(generated, target, bank),
        "mean_mse": float(np.sum((g.mean - t.mean) ** 2)),
        "cov_mse": float(np.sum((g.covariance - t.covariance) ** 2)),
        "skew_mse": float(np.sum((g.skewness - t.skewness) ** 2)),
        "kurt_mse": float(np.sum((g.excess_kurtosis - t.excess_kurtosis) ** 2)),
    }


def mode_coverage(X, spec: GmmSpec, radius: float = 3.0) -> np.ndarray:
    """Fraction of points within Mahalanobis ``radius`` of each component."""
    X = np.asarray(X, dtype=float)
    z = (X[:, None, :] - spec.means[None]) / spec.stds[None]
    return ((z ** 2).sum(axis=2) <= radius ** 2).mean(axis=0)
