"""Diagonal-covariance Gaussian mixtures: sampling, density, responsibilities
and the closed-form score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff
from .rng import SeededRng

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class GmmSpec:
    weights: np.ndarray  # (K,)
    means: np.ndarray    # (K, D)
    stds: np.ndarray     # (K, D)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        sd = np.atleast_2d(np.asarray(self.stds, dtype=float))
        if mu.shape != sd.shape or mu.shape[0] != w.size:
            raise ValueError(f"inconsistent shapes: weights {w.shape}, means {mu.shape}, stds {sd.shape}")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(sd <= 0):
            raise ValueError("standard deviations must be positive")
        for name, arr in (("weights", w), ("means", mu), ("stds", sd)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        cov = np.zeros((self.dim, self.dim))
        for pk, mk, sk in zip(self.weights, self.means, self.stds):
            d = mk - mu
            cov += pk * (np.diag(sk ** 2) + np.outer(d, d))
        return cov

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(), "stds": self.stds.tolist()}


DEFAULT_GMM = GmmSpec(
    weights=np.array([0.5, 0.3, 0.2]),
    means=np.array([[2.5, 0.0, -1.5], [-2.0, 2.0, 1.0], [0.0, -2.5, 2.0]]),
    stds=np.array([[0.60, 0.50, 0.70], [0.45, 0.65, 0.40], [0.55, 0.40, 0.60]]),
)


def sample(spec: GmmSpec, n: int, rng: SeededRng) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    k = rng.categorical(spec.weights, n)
    z = rng.normal((n, spec.dim))
    return spec.means[k] + spec.stds[k] * z


def _component_logpdf(spec: GmmSpec, x: np.ndarray) -> np.ndarray:
    """log pi_k + log N(x; mu_k, diag sigma_k^2), shape (n, K)."""
    diff = (x[:, None, :] - spec.means[None]) / spec.stds[None]
    log_norm = -0.5 * spec.dim * LOG_2PI - np.log(spec.stds).sum(axis=1)
    return np.log(spec.weights) + log_norm - 0.5 * (diff ** 2).sum(axis=2)


def _batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def log_density(spec: GmmSpec, x) -> np.ndarray | float:
    xb, single = _batch(x)
    lp = _component_logpdf(spec, xb)
    top = lp.max(axis=1, keepdims=True)
    out = top[:, 0] + np.log(np.exp(lp - top).sum(axis=1))
    return float(out[0]) if single else out


def responsibilities(spec: GmmSpec, x) -> np.ndarray:
    xb, single = _batch(x)
    lp = _component_logpdf(spec, xb)
    lp -= lp.max(axis=1, keepdims=True)
    r = np.exp(lp)
    r /= r.sum(axis=1, keepdims=True)
    return r[0] if single else r


def score(spec: GmmSpec, x) -> np.ndarray:
    """grad_x log p(x) = sum_k r_k(x) (mu_k - x) / sigma_k^2."""
    xb, single = _batch(x)
    r = responsibilities(spec, xb)
    pull = (spec.means[None] - xb[:, None, :]) / (spec.stds[None] ** 2)
    s = (r[:, :, None] * pull).sum(axis=1)
    return s[0] if single else s


def score_vjp(spec: GmmSpec, x, v) -> np.ndarray:
    """v^T (d score / d x), i.e. v times the Hessian of log p.

    Hessian = sum_k r_k (diag(-1/sigma_k^2) + g_k g_k^T) - s s^T with
    g_k = (mu_k - x) / sigma_k^2.
    """
    xb, single = _batch(x)
    vb = np.atleast_2d(np.asarray(v, dtype=float))
    r = responsibilities(spec, xb)
    prec = 1.0 / spec.stds ** 2                        # (K, D)
    g = (spec.means[None] - xb[:, None, :]) * prec[None]  # (n, K, D)
    s = (r[:, :, None] * g).sum(axis=1)
    vg = (vb[:, None, :] * g).sum(axis=2)              # (n, K)
    out = (r[:, :, None] * (-vb[:, None, :] * prec[None] + vg[:, :, None] * g)).sum(axis=1)
    out -= (vb * s).sum(axis=1, keepdims=True) * s
    return out[0] if single else out


def _score_fwd(x, spec):
    return score(spec, x), None


def _score_vjp(g, ins, out, cache, needs, spec):
    return (score_vjp(spec, ins[0], g),)


autodiff.register_op("gmm_score", _score_fwd, _score_vjp)


def score_on_tape(spec: GmmSpec, x: autodiff.Var) -> autodiff.Var:
    return x.tape.apply("gmm_score", x, spec=spec)
