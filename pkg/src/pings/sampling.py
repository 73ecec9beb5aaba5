"""Containers shared by every sampler."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SampleBatch:
    points: np.ndarray
    sampler: str
    seed: int
    nfe: int
    true_calls: int
    wall_clock: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.points.shape[0]


class CallCounter:
    """Counts batched network invocations."""

    def __init__(self):
        self.count = 0

    def tick(self) -> None:
        self.count += 1

    def reset(self) -> None:
        self.count = 0
