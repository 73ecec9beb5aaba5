"""Wall-clock timing of batched generation.

Protocol: a few untimed warmup runs, then ``runs`` timed runs, each with its
own RNG substream.  The timed region covers prior-noise generation plus all
network calls; model loading and metric computation stay outside.  On CPU
numpy executes eagerly, so the "barrier" at each end of the timed region is
materialising the output (touching its last element) before reading the
clock.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable

from .rng import SeededRng
from .sampling import SampleBatch

# sampler(n, rng) -> SampleBatch
Sampler = Callable[[int, SeededRng], SampleBatch]

REFERENCE_MS = {"pings": (16.54, 0.56), "dpm2-10": (468.10, 29.17),
                      "dpm2-20": (842.87, 74.78), "ddim-50": (960.41, 21.79)}


@dataclass
class TimingResult:
    sampler: str
    n: int
    runs: int
    seconds: list[float]
    nfe: int
    true_calls: int

    def __post_init__(self):
        if self.runs < 2 or len(self.seconds) != self.runs:
            raise ValueError("need at least two timed runs, one timing per run")
        if any(s <= 0 for s in self.seconds):
            raise ValueError("timings must be positive")

    @property
    def mean(self) -> float:
        return statistics.fmean(self.seconds)

    @property
    def std(self) -> float:
        return statistics.stdev(self.seconds)   # 1 / (runs - 1)

    @property
    def mean_ms(self) -> float:
        return 1e3 * self.mean

    @property
    def std_ms(self) -> float:
        return 1e3 * self.std


def _barrier(batch: SampleBatch) -> None:
    if batch.points.size:
        float(batch.points.flat[-1])


def time_generation(name: str, sampler: Sampler, n: int = 10_000, runs: int = 5, warmup: int = 2,
                    seed: int = 42) -> TimingResult:
    if n < 1:
        raise ValueError("n must be >= 1")
    if runs < 2 or warmup < 0:
        raise ValueError("runs must be >= 2 and warmup >= 0")
    root = SeededRng(seed, "timing")
    for i in range(warmup):
        _barrier(sampler(n, root.child(f"warmup-{i}")))
    seconds, nfe, calls = [], None, None
    for i in range(runs):
        rng = root.child(f"run-{i}")
        began = time.perf_counter()
        batch = sampler(n, rng)
        _barrier(batch)
        seconds.append(time.perf_counter() - began)
        if nfe is None:
            nfe, calls = batch.nfe, batch.true_calls
        elif (batch.nfe, batch.true_calls) != (nfe, calls):
            raise RuntimeError(f"{name}: call accounting changed between runs")
    return TimingResult(name, n, runs, seconds, nfe, calls)


ROW_FIELDS = ("sampler", "nfe", "true_calls", "n", "runs", "mean_s", "std_s", "runs_s")


def to_rows(results: list[TimingResult]) -> list[dict]:
    rows = []
    for r in sorted(results, key=lambda r: (r.nfe, r.mean)):
        rows.append({"sampler": r.sampler, "nfe": r.nfe, "true_calls": r.true_calls, "n": r.n, "runs": r.runs,
                     "mean_s": r.mean, "std_s": r.std, "runs_s": list(r.seconds)})
    return rows


def format_machine_rows(results: list[TimingResult]) -> str:
    """Tab-separated rows with repr-exact floats; ``parse_machine_rows`` inverts."""
    lines = ["\t".join(ROW_FIELDS)]
    for row in to_rows(results):
        lines.append("\t".join([
            row["sampler"], str(row["nfe"]), str(row["true_calls"]), str(row["n"]), str(row["runs"]),
            repr(row["mean_s"]), repr(row["std_s"]), ",".join(repr(s) for s in row["runs_s"]),
        ]))
    return "\n".join(lines) + "\n"


def parse_machine_rows(text: str) -> list[TimingResult]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if not lines or tuple(lines[0].split("\t")) != ROW_FIELDS:
        raise ValueError("missing or unexpected header row")
    out = []
    for ln in lines[1:]:
        f = ln.split("\t")
        if len(f) != len(ROW_FIELDS):
            raise ValueError(f"expected {len(ROW_FIELDS)} fields, got {len(f)}: {ln!r}")
        out.append(TimingResult(f[0], int(f[3]), int(f[4]), [float(s) for s in f[7].split(",")], int(f[1]), int(f[2])))
    return out


def speed_report(results: list[TimingResult]) -> str:
    """Human-readable table sorted by NFE, milliseconds to two decimals."""
    if not results:
        raise ValueError("no results to report")
    n = {r.n for r in results}
    col = f"{n.pop()} samples (ms)" if len(n) == 1 else "time (ms)"
    rows = [(r.sampler, str(r.nfe), str(r.true_calls), f"{r.mean_ms:.2f} ± {r.std_ms:.2f}")
            for r in sorted(results, key=lambda r: (r.nfe, r.mean))]
    head = ("method", "NFE", "calls", col)
    widths = [max(len(head[i]), *(len(row[i]) for row in rows)) for i in range(4)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*row) for row in rows]
    return "\n".join(lines) + "\n"
