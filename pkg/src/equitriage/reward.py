"""Scalarised multi-objective reward with a reporting-corrected equity term."""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from equitriage.domain import ActionSet, RewardWeights
from equitriage.errors import ComputationError, ConfigurationError


@dataclass(frozen=True)
class RewardBreakdown:
    speed: float
    cost: float
    equity: float
    retention: float
    total: float


@dataclass(frozen=True)
class RewardTables:
    """Per-outcome values for the speed, cost and retention terms.

    ``w_miss`` is the missed-defect penalty relative to the +1 credited for a
    correct escalation. Costs default to 1.0 for escalating actions and 0.0
    otherwise.
    """

    w_miss: float = 26.0
    correct_escalation: float = 1.0
    action_costs: Mapping[str, float] | None = None
    escalation_cost: float = 1.0
    retention_per_resolved: float = 1.0

    def cost_of(self, label: str, actions: ActionSet) -> float:
        if label not in actions.labels:
            raise ConfigurationError(f"unknown action {label!r}")
        if self.action_costs is not None and label in self.action_costs:
            return float(self.action_costs[label])
        return self.escalation_cost if label in actions.escalating else 0.0


@dataclass(frozen=True)
class StepOutcome:
    action: str
    escalated: bool
    defect: bool
    # a defect that the action left unaddressed for good
    missed: bool = False
    residential: bool = True


def speed_term(outcome: StepOutcome, tables: RewardTables) -> float:
    if outcome.escalated and outcome.defect:
        return tables.correct_escalation
    if outcome.missed:
        return -tables.w_miss
    return 0.0


def cost_term(outcome: StepOutcome, tables: RewardTables, actions: ActionSet) -> float:
    return tables.cost_of(outcome.action, actions)


def retention_term(outcome: StepOutcome, tables: RewardTables) -> float:
    if outcome.escalated and outcome.defect and outcome.residential:
        return tables.retention_per_resolved
    return 0.0


# --- equity variants -------------------------------------------------------

def has_empty_denominator(N: Mapping[str, float]) -> bool:
    return any(not v > 0 for v in N.values())


def _rates(n: Mapping[str, float], N: Mapping[str, float]) -> list[float]:
    if set(n) - set(N):
        raise ConfigurationError(f"escalation counts for unknown strata {sorted(set(n) - set(N))}")
    return [n.get(g, 0.0) / N[g] for g in N]


def _pair(n, N, name):
    if len(N) != 2:
        raise ConfigurationError(f"{name} equity term needs exactly 2 strata, got {len(N)}")
    if has_empty_denominator(N):
        return None
    a, b = _rates(n, N)
    return -abs(a - b)


def equity_biased(n: Mapping[str, float], N_raw: Mapping[str, float]) -> float:
    """Gap in escalations per *observed* complaint between the two strata."""
    out = _pair(n, N_raw, "biased")
    return 0.0 if out is None else out


def equity_corrected(n: Mapping[str, float], N_hat: Mapping[str, float]) -> float:
    """Gap in escalations per *estimated incident* between the two strata."""
    out = _pair(n, N_hat, "corrected")
    return 0.0 if out is None else out


def equity_multigroup_max(n: Mapping[str, float], N_hat: Mapping[str, float]) -> float:
    if len(N_hat) < 2:
        raise ConfigurationError("need at least 2 strata")
    if has_empty_denominator(N_hat):
        return 0.0
    rates = _rates(n, N_hat)
    return -max(abs(a - b) for a, b in itertools.combinations(rates, 2))


def equity_variance(n: Mapping[str, float], N_hat: Mapping[str, float]) -> float:
    if len(N_hat) < 2:
        raise ConfigurationError("need at least 2 strata")
    if has_empty_denominator(N_hat):
        return 0.0
    rates = np.array(_rates(n, N_hat))
    return -float(np.mean((rates - rates.mean()) ** 2))


EQUITY_FUNCTIONS = {
    "biased": equity_biased,
    "corrected": equity_corrected,
    "multigroup_max": equity_multigroup_max,
    "variance": equity_variance,
}


def equity_term(variant: str, n: Mapping[str, float], N_hat: Mapping[str, float],
                N_raw: Mapping[str, float] | None = None) -> tuple[float, bool]:
    """Evaluate one variant; returns ``(value, skipped)``.

    ``skipped`` is True when a zero denominator forced the term to 0.
    """
    if variant not in EQUITY_FUNCTIONS:
        raise ConfigurationError(f"unknown equity variant {variant!r}")
    denominators = N_raw if variant == "biased" else N_hat
    if denominators is None:
        raise ConfigurationError("biased equity term needs raw complaint counts")
    return EQUITY_FUNCTIONS[variant](n, denominators), has_empty_denominator(denominators)


def max_pairwise_gap(rates: Sequence[float]) -> float:
    rates = [r for r in rates if r is not None]
    if len(rates) < 2:
        return 0.0
    return max(rates) - min(rates)


def compose_reward(components: Mapping[str, float] | Sequence[float],
                   weights: RewardWeights) -> RewardBreakdown:
    """Combine ``speed - cost + equity + retention`` under the weight vector."""
    if isinstance(components, Mapping):
        speed, cost, equity, retention = (components[k] for k in ("speed", "cost", "equity", "retention"))
    else:
        speed, cost, equity, retention = components
    values = (speed, cost, equity, retention)
    if not all(math.isfinite(v) for v in values):
        raise ComputationError(f"non-finite reward component in {values}")
    if equity > 0:
        raise ComputationError(f"equity component must be <= 0, got {equity}")
    a1, a2, a3, a4 = weights.as_tuple()
    total = a1 * speed - a2 * cost + a3 * equity + a4 * retention
    return RewardBreakdown(float(speed), float(cost), float(equity), float(retention), float(total))


@dataclass
class EquityLedger:
    """Rolling-window count of correct escalations per stratum.

    Denominators are a snapshot installed at calibration boundaries and are
    not touched while the window rolls.
    """

    strata: tuple[str, ...]
    window_width: int
    N_hat: dict[str, float]
    N_raw: dict[str, float] = field(default_factory=dict)
    variant: str = "corrected"

    def __post_init__(self):
        self._events: deque[tuple[int, str]] = deque()
        self.counts = {g: 0 for g in self.strata}
        self.skipped_steps = 0

    def set_denominators(self, N_hat: Mapping[str, float], N_raw: Mapping[str, float] | None = None):
        self.N_hat = {g: float(N_hat.get(g, 0.0)) for g in self.strata}
        if N_raw is not None:
            self.N_raw = {g: float(N_raw.get(g, 0.0)) for g in self.strata}

    def record(self, step: int, stratum: str | None, correct_escalation: bool) -> None:
        if correct_escalation and stratum in self.counts:
            self._events.append((step, stratum))
            self.counts[stratum] += 1

    def advance(self, step: int) -> None:
        """Drop events that fell out of the window ending at ``step``."""
        cutoff = step - self.window_width
        while self._events and self._events[0][0] <= cutoff:
            _, g = self._events.popleft()
            self.counts[g] -= 1

    def value(self) -> tuple[float, bool]:
        value, skipped = equity_term(self.variant, self.counts, self.N_hat, self.N_raw or None)
        if skipped:
            self.skipped_steps += 1
        return value, skipped

    def rates(self) -> dict[str, float | None]:
        return {g: (self.counts[g] / self.N_hat[g] if self.N_hat.get(g, 0) > 0 else None)
                for g in self.strata}

    def snapshot(self) -> dict[str, int]:
        return dict(self.counts)
