"""DDPM epsilon-prediction baseline and two deterministic samplers.

The noise predictor is a tanh MLP on [x_t, embed(t / T)].  Both samplers talk
to any callable ``eps(x, t, alpha_bar)`` carrying a ``counter``; that lets the
same code run against the trained net or against the exact epsilon of a
Gaussian target when checking the integrators themselves.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .gmm import DEFAULT_GMM, GmmSpec
from .gmm import sample as sample_target
from .nn import EMBED_DIM, EPS_SPEC, MlpSpec, ParamStore, mlp_forward, time_embed, xavier_init
from .optim import AdamState, EarlyStopper, LrSchedule, TrainingDivergence, adam_step, lr_at_epoch
from .rng import SeededRng
from .sampling import CallCounter, SampleBatch

log = logging.getLogger(__name__)

SAMPLERS = ("ddim", "dpm2")


@dataclass(frozen=True)
class BetaSchedule:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("need at least two diffusion steps")
        if not 0.0 < self.beta_start < self.beta_end < 1.0:
            raise ValueError("betas must satisfy 0 < start < end < 1")

    @property
    def betas(self) -> np.ndarray:
        return np.linspace(self.beta_start, self.beta_end, self.T)

    @property
    def alpha_bars(self) -> np.ndarray:
        """Table indexed by t = 0..T with alpha_bar_0 = 1."""
        return np.concatenate([[1.0], np.cumprod(1.0 - self.betas)])

    @property
    def log_snr(self) -> np.ndarray:
        """lambda_t = log(sqrt(ab) / sqrt(1 - ab)) for t = 1..T (decreasing)."""
        ab = self.alpha_bars[1:]
        return 0.5 * (np.log(ab) - np.log1p(-ab))


DEFAULT_SCHEDULE = BetaSchedule()


def alpha_bar(schedule: BetaSchedule, t) -> np.ndarray | float:
    t_arr = np.asarray(t)
    if not np.issubdtype(t_arr.dtype, np.integer):
        if not np.all(t_arr == np.round(t_arr)):
            raise ValueError("alpha_bar takes integer steps")
        t_arr = t_arr.astype(np.int64)
    if np.any(t_arr < 1) or np.any(t_arr > schedule.T):
        raise ValueError(f"t must lie in 1..{schedule.T}")
    out = schedule.alpha_bars[t_arr]
    return float(out) if out.ndim == 0 else out


def noising(x0, t, eps, schedule: BetaSchedule = DEFAULT_SCHEDULE) -> np.ndarray:
    """x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps, with t per row or shared."""
    ab = np.asarray(alpha_bar(schedule, t), dtype=float)
    if ab.ndim == 1:
        ab = ab[:, None]
    return np.sqrt(ab) * np.asarray(x0, dtype=float) + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=float)


def _net_input(x, t, T: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    return np.concatenate([x, time_embed(t / T)], axis=1)


class EpsNet:
    """Noise predictor eps(x_t, t); t may be fractional (in step units)."""

    kind = "eps"

    def __init__(self, params: ParamStore, schedule: BetaSchedule = DEFAULT_SCHEDULE):
        dims = params.spec.layer_dims
        if dims[0] != 3 + EMBED_DIM or dims[-1] != 3:
            raise ValueError(f"an eps-net maps R^{3 + EMBED_DIM} to R^3, got dims {dims}")
        self.params = params
        self.schedule = schedule
        self.counter = CallCounter()

    @classmethod
    def init(cls, rng: SeededRng, spec: MlpSpec = EPS_SPEC) -> "EpsNet":
        return cls(xavier_init(spec, rng))

    def __call__(self, x, t, alpha_bar_t=None) -> np.ndarray:
        self.counter.tick()
        return mlp_forward(self.params, _net_input(x, t, self.schedule.T))


class GaussianEps:
    """Exact epsilon for data ~ N(mu, sigma^2 I):
    sqrt(1 - ab) (x - sqrt(ab) mu) / (ab sigma^2 + 1 - ab)."""

    kind = "eps-oracle"

    def __init__(self, mu, sigma):
        self.mu = np.asarray(mu, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.counter = CallCounter()

    def __call__(self, x, t, alpha_bar_t) -> np.ndarray:
        self.counter.tick()
        ab = alpha_bar_t
        return np.sqrt(1.0 - ab) * (x - np.sqrt(ab) * self.mu) / (ab * self.sigma ** 2 + 1.0 - ab)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpsTrainConfig:
    epochs: int = 20000
    batch: int = 2048
    lr: float = 1e-3
    lr_gamma: float = 0.999
    lr_interval: int = 1000
    patience: int = 3000
    seed: int = 42
    layer_dims: tuple = EPS_SPEC.layer_dims

    def __post_init__(self):
        if self.epochs < 0 or self.batch < 1 or self.patience < 0:
            raise ValueError("epochs and patience must be >= 0, batch >= 1")
        self.layer_dims = tuple(int(d) for d in self.layer_dims)

    @property
    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, self.lr_gamma, self.lr_interval)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_dims"] = list(self.layer_dims)
        return d


@dataclass
class EpsTrainResult:
    net: EpsNet
    log: list[dict] = field(default_factory=list)
    best_loss: float = float("inf")
    best_epoch: int = -1
    epochs_run: int = 0
    stopped_early: bool = False


def eps_loss_on_tape(layers, x_t, t, eps, T: int) -> ad.Var:
    """Batch mean of ||eps_hat - eps||^2."""
    pred = ad.mlp_on_tape(layers, _net_input(x_t, t, T))
    return ad.mean_sq_norm(pred - layers[0][0].tape.const(eps))


class NoisingSource:
    def __init__(self, seed: int, spec: GmmSpec, batch: int, schedule: BetaSchedule):
        self.target = SeededRng(seed, "target")
        self.times = SeededRng(seed, "t-draws")
        self.noise = SeededRng(seed, "noise")
        self.spec, self.batch, self.schedule = spec, batch, schedule

    def next(self):
        x0 = sample_target(self.spec, self.batch, self.target)
        t = self.times.integers(1, self.schedule.T + 1, size=self.batch)
        eps = self.noise.normal((self.batch, 3))
        return noising(x0, t, eps, self.schedule), t, eps


def train_eps(config: EpsTrainConfig = EpsTrainConfig(), spec: GmmSpec = DEFAULT_GMM,
              schedule: BetaSchedule = DEFAULT_SCHEDULE,
              on_epoch: Callable[[dict], None] | None = None) -> EpsTrainResult:
    """Plain DDPM objective; no EMA, no guidance."""
    params = xavier_init(MlpSpec(config.layer_dims), SeededRng(config.seed, "init"))
    names = params.names()
    arrays = params.arrays()
    state = AdamState.zeros_like(arrays)
    stopper = EarlyStopper(config.patience)
    source = NoisingSource(config.seed, spec, config.batch, schedule)
    result = EpsTrainResult(EpsNet(params.copy(), schedule))
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config.lr_schedule, epoch)
        tape = ad.Tape()
        current = ParamStore(arrays[0::2], arrays[1::2])
        loss = eps_loss_on_tape(current.on_tape(tape), *source.next(), schedule.T)
        value = float(loss.value)
        row = {"epoch": epoch, "lr": lr, "eps": value, "total": value}
        result.log.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if not np.isfinite(value):
            raise TrainingDivergence("non-finite loss", epoch)
        stop = stopper.update(value)
        if stopper.steps_since_best == 0:
            result.best_loss, result.best_epoch = value, epoch
            result.net = EpsNet(current.copy(), schedule)
        result.epochs_run = epoch + 1
        if stop:
            result.stopped_early = True
            break
        grads = tape.backward(loss)
        try:
            arrays = adam_step(arrays, [grads[n] for n in names], state, lr)
        except TrainingDivergence as exc:
            raise TrainingDivergence(str(exc), epoch) from None
        if epoch % 500 == 0:
            log.info("eps epoch %d loss %.6g", epoch, value)
    return result


def heldout_eps_error(net: EpsNet, spec: GmmSpec = DEFAULT_GMM, n: int = 10000, seed: int = 7) -> float:
    """E||eps_hat - eps||^2 on fresh draws (the zero predictor scores 3)."""
    src = NoisingSource(seed, spec, n, net.schedule)
    x_t, t, eps = src.next()
    return float(np.mean(np.sum((mlp_forward(net.params, _net_input(x_t, t, net.schedule.T)) - eps) ** 2, axis=1)))


# ---------------------------------------------------------------------------
# samplers


def ddim_grid(steps: int, T: int) -> np.ndarray:
    """Integer-rounded evenly spaced grid from T down to 0, both ends included."""
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in 1..{T}")
    return np.round(np.linspace(T, 0, steps + 1)).astype(np.int64)


def ddim_sample(eps_fn, n: int, rng: SeededRng, steps: int = 50,
                schedule: BetaSchedule = DEFAULT_SCHEDULE) -> SampleBatch:
    """Deterministic (eta = 0) DDIM; one eps call per step, last step lands on t = 0."""
    grid = ddim_grid(steps, schedule.T)
    ab = schedule.alpha_bars
    start = eps_fn.counter.count
    began = time.perf_counter()
    x = rng.normal((n, 3))
    for t, t_prev in zip(grid[:-1], grid[1:]):
        e = eps_fn(x, float(t), ab[t])
        x0_hat = (x - np.sqrt(1.0 - ab[t]) * e) / np.sqrt(ab[t])
        x = np.sqrt(ab[t_prev]) * x0_hat + np.sqrt(1.0 - ab[t_prev]) * e
    elapsed = time.perf_counter() - began
    calls = eps_fn.counter.count - start
    return SampleBatch(x, f"ddim-{steps}", rng.seed, nfe=steps, true_calls=calls, wall_clock=elapsed,
                       meta={"eta": 0.0})


def dpm2_nodes(steps: int, schedule: BetaSchedule = DEFAULT_SCHEDULE):
    """Nodes uniform in log-SNR from lambda(T) up to lambda(1).

    Returns (lambda, fractional t, alpha_bar) arrays of length steps + 1.
    Fractional t comes from linear interpolation of the lambda table and is
    only used as the network's time input; alpha_bar is taken from lambda
    itself (alpha_bar = sigmoid(2 lambda)) so the integrator stays exact in
    its own variable.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    lam_table = schedule.log_snr                   # t = 1..T, decreasing
    lam = np.linspace(lam_table[-1], lam_table[0], steps + 1)
    ts = np.interp(lam, lam_table[::-1], np.arange(schedule.T, 0, -1, dtype=float))
    ab = 1.0 / (1.0 + np.exp(-2.0 * lam))
    return lam, ts, ab


def dpm2_sample(eps_fn, n: int, rng: SeededRng, steps: int = 10,
                schedule: BetaSchedule = DEFAULT_SCHEDULE) -> SampleBatch:
    """Second-order Heun steps on the probability-flow ODE.

    With y = x / alpha and rho = sigma / alpha = exp(-lambda) the ODE reads
    dy/drho = eps(x, t).  Each step takes an Euler predictor with eps at the
    current node and corrects with the average of that and eps at the
    predicted point, so it costs two calls.  Output is x at the last node.
    """
    lam, ts, ab = dpm2_nodes(steps, schedule)
    alpha = np.sqrt(ab)
    rho = np.exp(-lam)
    start = eps_fn.counter.count
    began = time.perf_counter()
    x = rng.normal((n, 3))
    y = x / alpha[0]
    for i in range(steps):
        h = rho[i + 1] - rho[i]
        e1 = eps_fn(alpha[i] * y, ts[i], ab[i])
        y_pred = y + h * e1
        e2 = eps_fn(alpha[i + 1] * y_pred, ts[i + 1], ab[i + 1])
        y = y + 0.5 * h * (e1 + e2)
    x = alpha[-1] * y
    elapsed = time.perf_counter() - began
    calls = eps_fn.counter.count - start
    return SampleBatch(x, f"dpm2-{steps}", rng.seed, nfe=steps, true_calls=calls, wall_clock=elapsed,
                       meta={"t_min": float(ts[-1])})


def sample(eps_fn, kind: str, n: int, rng: SeededRng, steps: int | None = None,
           schedule: BetaSchedule = DEFAULT_SCHEDULE) -> SampleBatch:
    if kind == "ddim":
        return ddim_sample(eps_fn, n, rng, 50 if steps is None else steps, schedule)
    if kind == "dpm2":
        return dpm2_sample(eps_fn, n, rng, 10 if steps is None else steps, schedule)
    raise ValueError(f"unknown sampler {kind!r}; expected one of {SAMPLERS}")
