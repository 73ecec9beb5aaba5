"""Adam, stepped exponential learning-rate decay and early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class TrainingDivergence(RuntimeError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: list[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float) -> list[np.ndarray]:
    """One bias-corrected Adam update.  Returns new parameter arrays; the
    moment buffers in ``state`` are updated in place."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        out.append(p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return out


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 1e-3
    gamma: float = 0.999
    interval: int = 1000

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.interval < 1:
            raise ValueError("interval must be >= 1")


def lr_at_epoch(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return schedule.base_lr * schedule.gamma ** (epoch // schedule.interval)


IMPROVEMENT_TOL = 1e-12


@dataclass
class EarlyStopper:
    patience: int
    best_loss: float = math.inf
    steps_since_best: int = 0
    diverged: bool = field(default=False)

    def update(self, loss: float) -> bool:
        """Feed one loss; True means stop.

        A step counts as an improvement only if it beats the best loss by
        more than ``IMPROVEMENT_TOL``.
        """
        if not math.isfinite(loss):
            self.diverged = True
            return True
        if loss < self.best_loss - IMPROVEMENT_TOL:
            self.best_loss = loss
            self.steps_since_best = 0
            return False
        self.steps_since_best += 1
        return self.steps_since_best > self.patience


def early_stop_update(stopper: EarlyStopper, loss: float) -> str:
    return "stop" if stopper.update(loss) else "continue"
