"""The direct generator g(t, z): training objective, training loop and
single-call sampling.

g is a tanh MLP on (t, z1, z2, z3).  Training anchors g(1, z) = z, matches
g(0, Z) to target draws with MMD^2 plus a moment penalty, and penalises the
interior residual  d/dt g(t, z) - alpha(t) s(g(t, z))  on t in (0, 1), where
s is the target score (score-informed) or zero (score-free).
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .gmm import DEFAULT_GMM, GmmSpec, score, score_on_tape
from .gmm import sample as sample_target
from .metrics import DEFAULT_BANK, KernelBank, mmd2_on_tape, moment_loss_on_tape
from .nn import PINGS_SPEC, MlpSpec, ParamStore, mlp_forward, xavier_init
from .optim import AdamState, EarlyStopper, LrSchedule, TrainingDivergence, adam_step, lr_at_epoch
from .rng import SeededRng
from .sampling import CallCounter, SampleBatch

log = logging.getLogger(__name__)

MODES = ("score-informed", "score-free")
T_AXIS = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class ResidualSchedule:
    alpha_scale: float = 1.0
    alpha_power: float = 1.0

    def alpha(self, t):
        return self.alpha_scale * (1.0 - np.asarray(t, dtype=float)) ** self.alpha_power


@dataclass(frozen=True)
class LossWeights:
    bc: float = 1.0
    mmd: float = 2.0
    mom: float = 0.1
    phys: float = 0.5

    def __post_init__(self):
        if min(self.bc, self.mmd, self.mom, self.phys) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    epochs: int = 20000
    batch: int = 2048
    lr: float = 1e-3
    lr_gamma: float = 0.999
    lr_interval: int = 1000
    patience: int = 3000
    seed: int = 42
    mode: str = "score-informed"
    alpha_scale: float = 1.0
    alpha_power: float = 1.0
    w_bc: float = 1.0
    w_mmd: float = 2.0
    w_mom: float = 0.1
    w_phys: float = 0.5
    t_eps: float = 1e-4
    layer_dims: tuple = PINGS_SPEC.layer_dims

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1 or self.batch < 2 or self.patience < 1:
            raise ValueError("epochs, batch and patience must be positive (batch >= 2)")
        if not 0 < self.t_eps < 0.5:
            raise ValueError("t_eps must lie in (0, 0.5)")
        self.layer_dims = tuple(int(d) for d in self.layer_dims)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_bc, self.w_mmd, self.w_mom, self.w_phys)

    @property
    def schedule(self) -> ResidualSchedule:
        return ResidualSchedule(self.alpha_scale, self.alpha_power)

    @property
    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, self.lr_gamma, self.lr_interval)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_dims"] = list(self.layer_dims)
        return d


class PingsModel:
    """Generator parameters plus a counter of batched network calls."""

    kind = "pings"

    def __init__(self, params: ParamStore):
        dims = params.spec.layer_dims
        if dims[0] != 4 or dims[-1] != 3:
            raise ValueError(f"a generator maps (t, z) in R^4 to R^3, got dims {dims}")
        self.params = params
        self.counter = CallCounter()

    @classmethod
    def init(cls, rng: SeededRng, spec: MlpSpec = PINGS_SPEC) -> "PingsModel":
        return cls(xavier_init(spec, rng))

    def forward(self, t, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        zb = z[None, :] if single else z
        tb = np.broadcast_to(np.asarray(t, dtype=float), (zb.shape[0],))
        self.counter.tick()
        out = mlp_forward(self.params, np.column_stack([tb, zb]))
        return out[0] if single else out


def generator_forward(model: PingsModel, t, z) -> np.ndarray:
    return model.forward(t, z)


def _inputs(t, Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (Z.shape[0],))
    return np.column_stack([t, Z])


def _score_fn(mode: str, spec: GmmSpec | None):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    return None if mode == "score-free" else spec


# ---------------------------------------------------------------------------
# taped loss terms


def residual_on_tape(layers, t, Z, spec: GmmSpec | None, schedule: ResidualSchedule) -> ad.Var:
    """d/dt g(t, z) - alpha(t) s(g(t, z)) per row; ``spec=None`` means s = 0."""
    dual = ad.forward_with_input_derivatives(layers, _inputs(t, Z), T_AXIS, order=1)
    if spec is None:
        return dual.d1
    tape = dual.value.tape
    alpha = tape.const(np.broadcast_to(schedule.alpha(t), (dual.value.shape[0],))[:, None])
    return dual.d1 - alpha * score_on_tape(spec, dual.value)


def loss_bc_on_tape(layers, Z) -> ad.Var:
    out = ad.mlp_on_tape(layers, _inputs(1.0, Z))
    return ad.mean_sq_norm(out - Z)


def loss_phys_on_tape(layers, t, Z, spec, schedule) -> ad.Var:
    return ad.mean_sq_norm(residual_on_tape(layers, t, Z, spec, schedule))


@dataclass
class Batches:
    Z: np.ndarray        # prior draws shared by the bc, distribution and residual terms
    X: np.ndarray        # target draws
    t: np.ndarray        # interior times for the residual


TERMS = ("bc", "mmd", "mom", "phys")


def total_loss_on_tape(layers, batches: Batches, weights: LossWeights, mode: str,
                       spec: GmmSpec = DEFAULT_GMM, schedule: ResidualSchedule = ResidualSchedule(),
                       bank: KernelBank = DEFAULT_BANK):
    """Weighted objective; returns (total, {term: Var}).

    Terms with zero weight are still evaluated so the breakdown is always
    complete.
    """
    tape = layers[0][0].tape
    terms = {"bc": loss_bc_on_tape(layers, batches.Z)}
    x0 = ad.mlp_on_tape(layers, _inputs(0.0, batches.Z))
    target = tape.const(batches.X)
    terms["mmd"] = mmd2_on_tape(x0, target, bank)
    terms["mom"] = moment_loss_on_tape(x0, target)
    terms["phys"] = loss_phys_on_tape(layers, batches.t, batches.Z, _score_fn(mode, spec), schedule)
    w = asdict(weights)
    total = None
    for name in TERMS:
        part = terms[name] * w[name]
        total = part if total is None else total + part
    return total, terms


# untaped conveniences -------------------------------------------------------


def residual(model: PingsModel, t, z, score_fn: Callable | None, schedule: ResidualSchedule = ResidualSchedule()):
    """Residual for a batch.  ``score_fn`` maps points to scores, or None for s = 0."""
    tape = ad.Tape()
    layers = model.params.on_tape(tape)
    dual = ad.forward_with_input_derivatives(layers, _inputs(t, z), T_AXIS, order=1)
    R = dual.d1.value
    if score_fn is not None:
        R = R - np.asarray(schedule.alpha(t), dtype=float).reshape(-1, 1) * score_fn(dual.value.value)
    return R[0] if np.asarray(z).ndim == 1 else R


def loss_bc(model: PingsModel, Z) -> float:
    out = mlp_forward(model.params, _inputs(1.0, Z))
    return float(np.mean(np.sum((out - Z) ** 2, axis=1)))


def loss_phys(model: PingsModel, t, Z, score_fn, schedule: ResidualSchedule = ResidualSchedule()) -> float:
    R = residual(model, t, Z, score_fn, schedule)
    return float(np.mean(np.sum(np.atleast_2d(R) ** 2, axis=1)))


def total_loss(params: ParamStore, batches: Batches, weights: LossWeights, mode: str,
               spec: GmmSpec = DEFAULT_GMM, schedule: ResidualSchedule = ResidualSchedule()):
    """Value of the objective and its per-term breakdown (floats)."""
    tape = ad.Tape()
    total, terms = total_loss_on_tape(params.on_tape(tape), batches, weights, mode, spec, schedule)
    value = float(total.value)
    if not np.isfinite(value):
        raise TrainingDivergence("non-finite loss")
    return value, {k: float(v.value) for k, v in terms.items()}


def mixture_score(spec: GmmSpec = DEFAULT_GMM) -> Callable:
    return lambda x: score(spec, x)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: PingsModel
    log: list[dict] = field(default_factory=list)
    best_loss: float = float("inf")
    best_epoch: int = -1
    epochs_run: int = 0
    stopped_early: bool = False


class BatchSource:
    """Fresh, independent draws per step from dedicated substreams."""

    def __init__(self, seed: int, spec: GmmSpec, batch: int, t_eps: float):
        self.prior = SeededRng(seed, "prior")
        self.target = SeededRng(seed, "target")
        self.times = SeededRng(seed, "t-draws")
        self.spec = spec
        self.batch = batch
        self.t_eps = t_eps

    def next(self) -> Batches:
        n = self.batch
        return Batches(
            Z=self.prior.normal((n, 3)),
            X=sample_target(self.spec, n, self.target),
            t=self.times.uniform(self.t_eps, 1.0 - self.t_eps, size=n),
        )


def train(config: TrainConfig, spec: GmmSpec = DEFAULT_GMM,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam + stepped decay + early stopping; returns the lowest-loss parameters."""
    params = xavier_init(MlpSpec(config.layer_dims), SeededRng(config.seed, "init"))
    names = params.names()
    arrays = params.arrays()
    state = AdamState.zeros_like(arrays)
    stopper = EarlyStopper(config.patience)
    source = BatchSource(config.seed, spec, config.batch, config.t_eps)
    weights, schedule, mode = config.weights, config.schedule, config.mode
    result = TrainResult(PingsModel(params.copy()))
    started = time.perf_counter()
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config.lr_schedule, epoch)
        tape = ad.Tape()
        current = ParamStore(arrays[0::2], arrays[1::2])
        total, terms = total_loss_on_tape(current.on_tape(tape), source.next(), weights, mode, spec, schedule)
        value = float(total.value)
        row = {"epoch": epoch, "lr": lr, **{k: float(v.value) for k, v in terms.items()}, "total": value}
        result.log.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if not np.isfinite(value):
            raise TrainingDivergence("non-finite loss", epoch)
        stop = stopper.update(value)
        if stopper.steps_since_best == 0:
            result.best_loss, result.best_epoch = value, epoch
            result.model = PingsModel(current.copy())
        result.epochs_run = epoch + 1
        if stop:
            result.stopped_early = True
            break
        grads = tape.backward(total)
        try:
            arrays = adam_step(arrays, [grads[n] for n in names], state, lr)
        except TrainingDivergence as exc:
            raise TrainingDivergence(str(exc), epoch) from None
        if epoch % 500 == 0:
            log.info("epoch %d total %.6g (%.1fs)", epoch, value, time.perf_counter() - started)
    return result


def sample(model: PingsModel, n: int, rng: SeededRng) -> SampleBatch:
    """Draw n points with one batched network call (NFE = 1)."""
    start = model.counter.count
    began = time.perf_counter()
    Z = rng.normal((n, 3))
    X = model.forward(0.0, Z)
    elapsed = time.perf_counter() - began
    return SampleBatch(X, "pings", rng.seed, nfe=1, true_calls=model.counter.count - start, wall_clock=elapsed)
