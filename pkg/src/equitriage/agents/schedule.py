from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear decay from ``initial`` to ``final`` over ``decay_steps``, then flat."""

    initial: float = 1.0
    final: float = 0.05
    decay_steps: int = 10_000

    def __post_init__(self):
        if not 0.0 <= self.final <= self.initial <= 1.0:
            raise ValueError("need 0 <= final <= initial <= 1")
        if self.decay_steps < 1:
            raise ValueError("decay_steps must be positive")

    def value(self, step: int) -> float:
        if step >= self.decay_steps:
            return self.final
        frac = max(step, 0) / self.decay_steps
        return self.initial + frac * (self.final - self.initial)

    __call__ = value
