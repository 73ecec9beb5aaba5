"""PINN surrogate x(z, xi) for the damped oscillator x'' + 2 xi x' + x = 0.

Serves as an end-to-end check of the tape: the residual needs second input
derivatives and the optimiser needs gradients through them.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .nn import DHO_SPEC, MlpSpec, ParamStore, mlp_forward, xavier_init
from .optim import AdamState, EarlyStopper, LrSchedule, TrainingDivergence, adam_step, lr_at_epoch
from .rng import SeededRng

log = logging.getLogger(__name__)

X0 = 0.7
V0 = 1.2
Z_AXIS = np.array([1.0, 0.0])  # network input is (z, xi)
EVAL_POINTS = 5000
REPORT_XIS = (0.1, 0.2, 0.3, 0.4)


@dataclass
class DhoConfig:
    xi_low: float = 0.1
    xi_high: float = 0.4
    z_low: float = 0.0
    z_high: float = 20.0
    n_ic: int = 100
    n_r: int = 2000
    epochs: int = 20000
    lr: float = 1e-3
    lr_gamma: float = 0.99
    lr_interval: int = 1000
    patience: int = 1500
    seed: int = 42
    layer_dims: tuple = DHO_SPEC.layer_dims

    def __post_init__(self):
        if not 0.0 < self.xi_low <= self.xi_high < 1.0:
            raise ValueError("damping range must lie inside (0, 1)")
        if not self.z_high > self.z_low:
            raise ValueError("z range is empty")
        if self.n_ic < 1 or self.n_r < 1 or self.epochs < 0 or self.patience < 0:
            raise ValueError("batch sizes must be >= 1, epochs and patience >= 0")
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if self.layer_dims[0] != 2 or self.layer_dims[-1] != 1:
            raise ValueError(f"oscillator net maps R^2 to R, got {self.layer_dims}")

    @property
    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, self.lr_gamma, self.lr_interval)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_dims"] = list(self.layer_dims)
        return d


def damped_frequency(xi):
    return np.sqrt(np.maximum(1.0 - np.asarray(xi, dtype=float) ** 2, 1e-12))


def analytic_solution(z, xi):
    """Closed-form underdamped solution with x(0)=0.7, x'(0)=1.2."""
    z = np.asarray(z, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0) or np.any(xi >= 1):
        raise ValueError("xi must lie in (0, 1)")
    if np.any(z < 0):
        raise ValueError("z must be non-negative")
    wd = damped_frequency(xi)
    c2 = (V0 + xi * X0) / wd
    return np.exp(-xi * z) * (X0 * np.cos(wd * z) + c2 * np.sin(wd * z))


def predict(params: ParamStore, z, xi) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    xi = np.broadcast_to(np.asarray(xi, dtype=float), z.shape)
    return mlp_forward(params, np.column_stack([z, xi]))[:, 0]


@dataclass
class DhoBatch:
    xi_ic: np.ndarray     # (n_ic,)
    z_r: np.ndarray       # (n_r,)
    xi_r: np.ndarray      # (n_r,)


def _evaluator(net):
    if callable(net):
        return net
    return lambda x, direction, order: ad.forward_with_input_derivatives(net, x, direction, order)


def dho_losses(net, batch: DhoBatch):
    """Return the taped (L_ic_val, L_ic_der, L_res).

    ``net`` is a list of taped layers, or any callable
    ``(x, direction, order) -> DualState`` (used to push a closed-form
    solution through the same loss assembly).
    """
    evaluate = _evaluator(net)
    x_ic = np.column_stack([np.zeros_like(batch.xi_ic), batch.xi_ic])
    ic = evaluate(x_ic, Z_AXIS, 1)
    tape = ic.value.tape
    l_val = ad.mean(ad.square(ic.value - tape.const(np.full((x_ic.shape[0], 1), X0))))
    l_der = ad.mean(ad.square(ic.d1 - tape.const(np.full((x_ic.shape[0], 1), V0))))
    x_r = np.column_stack([batch.z_r, batch.xi_r])
    col = evaluate(x_r, Z_AXIS, 2)
    two_xi = tape.const(2.0 * batch.xi_r[:, None])
    l_res = ad.mean(ad.square(col.d2 + two_xi * col.d1 + col.value))
    return l_val, l_der, l_res


def analytic_dual(tape: ad.Tape):
    """Evaluator returning the closed-form solution and its z-derivatives."""
    def evaluate(x, direction, order):
        z, xi = x[:, 0], x[:, 1]
        wd = damped_frequency(xi)
        c2 = (V0 + xi * X0) / wd
        e = np.exp(-xi * z)
        cs, sn = np.cos(wd * z), np.sin(wd * z)
        # x = e (C1 cos + C2 sin); derivatives by the product rule
        f = X0 * cs + c2 * sn
        f1 = wd * (-X0 * sn + c2 * cs)
        f2 = -wd * wd * f
        val = e * f
        d1 = e * (f1 - xi * f)
        d2 = e * (f2 - 2.0 * xi * f1 + xi * xi * f)
        col = lambda a: tape.const(a[:, None])
        return ad.DualState(col(val), col(d1), col(d2) if order == 2 else None)

    return evaluate


class DhoSampler:
    """Per-epoch resampling of IC and collocation points."""

    def __init__(self, config: DhoConfig):
        self.config = config
        self.ic = SeededRng(config.seed, "ic-draws")
        self.collocation = SeededRng(config.seed, "collocation-draws")

    def next(self) -> DhoBatch:
        c = self.config
        return DhoBatch(
            xi_ic=self.ic.uniform(c.xi_low, c.xi_high, size=c.n_ic),
            z_r=self.collocation.uniform(c.z_low, c.z_high, size=c.n_r),
            xi_r=self.collocation.uniform(c.xi_low, c.xi_high, size=c.n_r),
        )


@dataclass
class DhoResult:
    params: ParamStore
    log: list[dict] = field(default_factory=list)
    best_loss: float = float("inf")
    best_epoch: int = -1
    epochs_run: int = 0
    stopped_early: bool = False


def train_dho(config: DhoConfig = DhoConfig(), on_epoch: Callable[[dict], None] | None = None) -> DhoResult:
    params = xavier_init(MlpSpec(config.layer_dims), SeededRng(config.seed, "init"))
    names = params.names()
    arrays = params.arrays()
    state = AdamState.zeros_like(arrays)
    stopper = EarlyStopper(config.patience)
    sampler = DhoSampler(config)
    result = DhoResult(params.copy())
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config.lr_schedule, epoch)
        tape = ad.Tape()
        current = ParamStore(arrays[0::2], arrays[1::2])
        l_val, l_der, l_res = dho_losses(current.on_tape(tape), sampler.next())
        total = l_val + l_der + l_res
        value = float(total.value)
        row = {"epoch": epoch, "lr": lr, "ic_val": float(l_val.value), "ic_der": float(l_der.value),
               "res": float(l_res.value), "total": value}
        result.log.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if not np.isfinite(value):
            raise TrainingDivergence("non-finite loss", epoch)
        stop = stopper.update(value)
        if stopper.steps_since_best == 0:
            result.best_loss, result.best_epoch = value, epoch
            result.params = current.copy()
        result.epochs_run = epoch + 1
        if stop:
            result.stopped_early = True
            break
        grads = tape.backward(total)
        try:
            arrays = adam_step(arrays, [grads[n] for n in names], state, lr)
        except TrainingDivergence as exc:
            raise TrainingDivergence(str(exc), epoch) from None
        if epoch % 1000 == 0:
            log.info("dho epoch %d total %.6g", epoch, value)
    return result


def evaluation_grid(config: DhoConfig = DhoConfig()) -> np.ndarray:
    """Inclusive, equally spaced z grid used for reported errors."""
    return np.linspace(config.z_low, config.z_high, EVAL_POINTS)


def evaluate_mse(params: ParamStore, xi: float, config: DhoConfig = DhoConfig()) -> float:
    z = evaluation_grid(config)
    return float(np.mean((predict(params, z, xi) - analytic_solution(z, xi)) ** 2))


def curves(params: ParamStore, xis=REPORT_XIS, config: DhoConfig = DhoConfig()) -> dict:
    """{xi: (z, prediction, analytic)} on the evaluation grid."""
    z = evaluation_grid(config)
    return {float(xi): (z, predict(params, z, xi), analytic_solution(z, xi)) for xi in xis}
