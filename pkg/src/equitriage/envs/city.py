"""Synthetic city: census-tract analogues with quintile-graded reporting."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from equitriage.domain import TractProfile, assign_strata, stratum_labels
from equitriage.errors import ConfigurationError
from equitriage.rng import substream

# (low, high) uniform ranges indexed by income quintile 1..5
DEFAULT_INCIDENT_RANGE = {1: (1.2, 1.6), 2: (1.0, 1.4), 3: (0.9, 1.3), 4: (0.8, 1.2), 5: (0.7, 1.1)}
DEFAULT_PROPENSITY_RANGE = {1: (0.25, 0.45), 2: (0.35, 0.55), 3: (0.45, 0.65), 4: (0.55, 0.75), 5: (0.65, 0.85)}
DEFAULT_INTAKE_RANGE = {1: (0.45, 0.6), 2: (0.55, 0.7), 3: (0.65, 0.8), 4: (0.8, 0.9), 5: (0.85, 0.95)}


def _ranges(value) -> dict[int, tuple[float, float]]:
    return {int(k): (float(v[0]), float(v[1])) for k, v in dict(value).items()}


@dataclass(frozen=True)
class CityConfig:
    n_tracts: int = 20
    steps_per_episode: int = 1000
    incident_rate_range: dict = field(default_factory=lambda: dict(DEFAULT_INCIDENT_RANGE))
    propensity_range: dict = field(default_factory=lambda: dict(DEFAULT_PROPENSITY_RANGE))
    intake_quality_range: dict = field(default_factory=lambda: dict(DEFAULT_INTAKE_RANGE))
    defect_rate: float = 0.08
    # probability a new report duplicates an open incident; None ties it to 1 - propensity
    duplicate_rate: float | None = None
    K: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "incident_rate_range", _ranges(self.incident_rate_range))
        object.__setattr__(self, "propensity_range", _ranges(self.propensity_range))
        object.__setattr__(self, "intake_quality_range", _ranges(self.intake_quality_range))
        stratum_labels(self.K)
        if self.n_tracts < 2 * self.K:
            raise ConfigurationError(
                f"n_tracts={self.n_tracts} is too small for K={self.K} strata (need >= {2 * self.K})")
        if self.steps_per_episode < 1:
            raise ConfigurationError("steps_per_episode must be positive")
        if not 0.0 < self.defect_rate < 1.0:
            raise ConfigurationError("defect_rate must be in (0, 1)")
        if self.duplicate_rate is not None and not 0.0 <= self.duplicate_rate < 1.0:
            raise ConfigurationError("duplicate_rate must be in [0, 1)")
        for name, ranges, lo_bound, hi_bound in (
            ("incident_rate_range", self.incident_rate_range, 0.0, np.inf),
            ("propensity_range", self.propensity_range, 0.0, 1.0),
            ("intake_quality_range", self.intake_quality_range, 0.0, 1.0),
        ):
            if set(ranges) != {1, 2, 3, 4, 5}:
                raise ConfigurationError(f"{name} must cover quintiles 1..5")
            for q, (lo, hi) in ranges.items():
                if not lo_bound <= lo <= hi <= hi_bound:
                    raise ConfigurationError(f"{name}[{q}] = {(lo, hi)} out of range")
            if name == "propensity_range" and any(lo <= 0 for lo, _ in ranges.values()):
                raise ConfigurationError("propensity must be strictly positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("incident_rate_range", "propensity_range", "intake_quality_range"):
            d[k] = {q: list(v) for q, v in d[k].items()}
        return d


def _draw(rng, cfg: CityConfig, attempt: int) -> list[TractProfile]:
    n = cfg.n_tracts
    quintiles = rng.integers(1, 6, size=n)
    tracts = []
    raw_rates = np.empty(n)
    props = np.empty(n)
    for i, q in enumerate(quintiles):
        q = int(q)
        raw_rates[i] = rng.uniform(*cfg.incident_rate_range[q])
        props[i] = rng.uniform(*cfg.propensity_range[q])
    # scale so one complaint arrives per step in expectation
    scale = 1.0 / float(np.sum(raw_rates * props))
    for i, q in enumerate(quintiles):
        q = int(q)
        level = (q - 0.5) / 5.0
        covariates = tuple(float(np.clip(level + rng.normal(0.0, 0.08), 0.0, 1.0)) for _ in range(4))
        quality = float(rng.uniform(*cfg.intake_quality_range[q]))
        risk = float(np.clip(1.1 * props[i] * quality + rng.normal(0.0, 0.03), 0.0, 1.0))
        tracts.append(TractProfile(
            tract_id=f"T{i:03d}",
            covariates=covariates,
            income_quintile=q,
            true_incident_rate=float(raw_rates[i] * scale),
            reporting_propensity=float(props[i]),
            intake_quality=quality,
            neighborhood_risk=risk,
        ))
    return assign_strata(tracts, cfg.K)


def generate_city(config: CityConfig) -> list[TractProfile]:
    """Draw tract profiles; deterministic in ``config.seed``.

    A draw that leaves some stratum empty is redrawn from the next sub-seed,
    at most ten times.
    """
    labels = stratum_labels(config.K)
    for attempt in range(10):
        tracts = _draw(substream(config.seed, "city", attempt), config, attempt)
        present = {t.stratum for t in tracts}
        if all(g in present for g in labels):
            return tracts
    raise ConfigurationError(f"could not populate all {config.K} strata with {config.n_tracts} tracts")
