"""Shared oracles for the test-suite."""

import numpy as np

from pings import autodiff as ad
from pings.nn import MlpSpec, xavier_init
from pings.rng import SeededRng


def tiny_params(dims, seed=0, bias_scale=0.1):
    """Xavier weights plus small random biases so bias gradients are non-trivial."""
    p = xavier_init(MlpSpec(tuple(dims)), SeededRng(seed, "tiny"))
    rng = SeededRng(seed, "tiny-bias")
    p.biases = [bias_scale * rng.normal(b.shape) for b in p.biases]
    return p


def taped_gradient(params, build):
    """build(layers) -> scalar Var.  Returns (value, flat gradient)."""
    tape = ad.Tape()
    loss = build(params.on_tape(tape))
    grads = tape.backward(loss)
    return float(loss.value), np.concatenate([grads[n].ravel() for n in params.names()])


def fd_gradient(params, build, h=1e-6):
    def f(vec):
        tape = ad.Tape()
        return float(build(params.with_flat(vec).on_tape(tape)).value)

    return ad.finite_difference_gradient(f, params.flat(), h)


def gradient_error(params, build, h=1e-6, floor=1e-8):
    """max_i |g_i - fd_i| / max(|fd_i|, floor-relative scale)."""
    _, g = taped_gradient(params, build)
    fd = fd_gradient(params, build, h)
    scale = np.maximum(np.abs(fd), np.abs(g))
    err = np.abs(g - fd)
    rel = np.where(err <= floor, 0.0, err / np.maximum(scale, floor))
    return float(rel.max())


def naive_mmd2(A, B, bandwidths=(0.1, 0.2, 0.5, 1.0, 2.0)):
    """Literal double loop over pairs, no vectorisation."""
    def k(u, v):
        d = sum((u[c] - v[c]) ** 2 for c in range(len(u)))
        return sum(np.exp(-d / (2.0 * s * s)) for s in bandwidths)

    m, n = len(A), len(B)
    saa = sum(k(A[i], A[j]) for i in range(m) for j in range(m) if i != j)
    sbb = sum(k(B[i], B[j]) for i in range(n) for j in range(n) if i != j)
    sab = sum(k(A[i], B[j]) for i in range(m) for j in range(n))
    return saa / (m * (m - 1)) + sbb / (n * (n - 1)) - 2.0 * sab / (m * n)


def rk4_dho(xi, z_end, h=1e-4, x0=0.7, v0=1.2):
    """Classical RK4 on x'' + 2 xi x' + x = 0."""
    def f(y):
        return np.array([y[1], -2.0 * xi * y[1] - y[0]])

    y = np.array([x0, v0])
    steps = int(round(z_end / h))
    for _ in range(steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y[0]
