"""Learning-rate schedules indexed by step ``t`` in ``1..T``."""

import math
from dataclasses import dataclass

SCHEDULE_KINDS = ("constant", "cosine", "warmup_linear", "warmup_cosine")


@dataclass(frozen=True)
class Schedule:
    """``lr`` is the peak rate. Warmup ramps linearly from 0.

    ``warmup_cosine`` anneals to ``final_fraction * lr`` after warmup;
    ``warmup_linear`` decays linearly to 0.
    """

    kind: str = "constant"
    lr: float = 1e-3
    warmup_steps: int = 0
    final_fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be nonnegative")
        if self.kind.startswith("warmup") and self.warmup_steps < 1:
            raise ValueError(f"{self.kind} needs warmup_steps >= 1")
        if not 0.0 <= self.final_fraction <= 1.0:
            raise ValueError("final_fraction must lie in [0, 1]")

    def validate_horizon(self, T):
        if self.kind.startswith("warmup") and not self.warmup_steps < T:
            raise ValueError(f"warmup_steps ({self.warmup_steps}) must be < steps ({T})")


def lr_at(schedule, t, T):
    if not 1 <= t <= T:
        raise ValueError(f"step {t} outside 1..{T}")
    lr = schedule.lr
    kind = schedule.kind
    if kind == "constant":
        return lr
    if kind == "cosine":
        return lr * 0.5 * (1.0 + math.cos(math.pi * t / T))
    schedule.validate_horizon(T)
    w = schedule.warmup_steps
    if t <= w:
        return lr * t / w
    frac = (t - w) / (T - w)
    if kind == "warmup_linear":
        return lr * (1.0 - frac)
    floor = schedule.final_fraction * lr
    return floor + (lr - floor) * 0.5 * (1.0 + math.cos(math.pi * frac))
