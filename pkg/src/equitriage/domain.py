"""Core vocabulary: tracts, strata, complaints, reward weights and action sets."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from equitriage.errors import ConfigurationError, ValidationError

EQUITY_VARIANTS = ("biased", "corrected", "multigroup_max", "variance")

# default two-stratum split by income quintile; quintile 3 belongs to neither
TWO_STRATA = {1: "low", 2: "low", 4: "high", 5: "high"}
STRATUM_ORDER = {2: ("low", "high"), 5: ("1", "2", "3", "4", "5")}


@dataclass(frozen=True)
class TractProfile:
    tract_id: str
    covariates: tuple[float, float, float, float]
    income_quintile: int
    true_incident_rate: float
    reporting_propensity: float
    stratum: str | None = None
    # share of intake records that carry usable structured fields
    intake_quality: float = 1.0
    # historical neighbourhood statistic shown to agents
    neighborhood_risk: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.reporting_propensity <= 1.0:
            raise ValidationError(
                f"{self.tract_id}: reporting_propensity must be in (0, 1], got {self.reporting_propensity}"
            )
        if self.true_incident_rate < 0:
            raise ValidationError(f"{self.tract_id}: negative incident rate")
        if self.income_quintile not in (1, 2, 3, 4, 5):
            raise ValidationError(f"{self.tract_id}: income_quintile must be 1..5")
        if len(self.covariates) != 4:
            raise ValidationError(f"{self.tract_id}: expected 4 covariates")


@dataclass(frozen=True)
class ComplaintEvent:
    event_id: int
    tract_id: str
    step_index: int
    features: tuple[float, ...]
    is_duplicate: bool
    incident_id: int
    # hidden from agents; read only by outcome resolution and offline scoring
    latent_defect: bool = field(repr=False)
    age: int = 0


@dataclass(frozen=True)
class RewardWeights:
    alpha_speed: float = 0.25
    alpha_cost: float = 0.25
    alpha_equity: float = 0.25
    alpha_retention: float = 0.25
    equity_variant: str = "corrected"

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.alpha_speed, self.alpha_cost, self.alpha_equity, self.alpha_retention)

    @classmethod
    def from_sequence(cls, values: Sequence[float], equity_variant: str = "corrected") -> "RewardWeights":
        a, b, c, d = values
        return cls(float(a), float(b), float(c), float(d), equity_variant)


@dataclass(frozen=True)
class ActionSet:
    labels: tuple[str, ...]
    escalating: frozenset[str]
    # the "do nothing for now" action used by always_defer
    default_defer: str | None = None

    def __post_init__(self):
        if not self.labels:
            raise ValidationError("action set must be non-empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("action labels must be distinct")
        if not set(self.escalating) <= set(self.labels):
            raise ValidationError("escalating actions must be a subset of labels")
        if self.default_defer is not None and self.default_defer not in self.labels:
            raise ValidationError("default_defer must be one of the labels")

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigurationError(f"unknown action {label!r}; expected one of {self.labels}") from None

    def is_escalating(self, action: int | str) -> bool:
        label = self.labels[action] if isinstance(action, (int, np.integer)) else action
        return label in self.escalating

    @property
    def escalating_indices(self) -> tuple[int, ...]:
        return tuple(i for i, lab in enumerate(self.labels) if lab in self.escalating)


def stratum_labels(K: int) -> tuple[str, ...]:
    if K not in STRATUM_ORDER:
        raise ConfigurationError(f"unsupported number of strata K={K}; use 2 or 5")
    return STRATUM_ORDER[K]


def stratum_for_quintile(quintile: int, K: int = 2) -> str | None:
    if K == 2:
        return TWO_STRATA.get(quintile)
    if K == 5:
        return str(quintile)
    raise ConfigurationError(f"unsupported number of strata K={K}; use 2 or 5")


def assign_strata(tracts: Sequence[TractProfile], K: int = 2) -> list[TractProfile]:
    """Set each tract's stratum from its income quintile.

    With K=2, quintiles 1-2 are "low", 4-5 are "high" and quintile 3 gets
    ``None`` (excluded from equity accounting). With K=5 each quintile is its
    own stratum.
    """
    stratum_labels(K)
    return [replace(t, stratum=stratum_for_quintile(t.income_quintile, K)) for t in tracts]


def validate_weights(w: RewardWeights) -> RewardWeights:
    """Check weights are finite and non-negative, then normalise them to sum to one."""
    values = w.as_tuple()
    if not all(math.isfinite(v) for v in values):
        raise ValidationError(f"reward weights must be finite: {values}")
    if any(v < 0 for v in values):
        raise ValidationError(f"reward weights must be non-negative: {values}")
    total = math.fsum(values)
    if total <= 0:
        raise ValidationError("reward weights must not all be zero")
    if w.equity_variant not in EQUITY_VARIANTS:
        raise ValidationError(f"unknown equity variant {w.equity_variant!r}")
    if abs(total - 1.0) <= 1e-12:
        return w
    return RewardWeights(*(v / total for v in values), equity_variant=w.equity_variant)
