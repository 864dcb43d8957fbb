"""Binary triage of boiler complaints: Defer or Inspect."""
from __future__ import annotations

import numpy as np

from equitriage.domain import ActionSet, TractProfile
from equitriage.envs.base import ComplaintEnv
from equitriage.errors import ConfigurationError
from equitriage.reward import StepOutcome

BOILER_ACTIONS = ActionSet(("Defer", "Inspect"), frozenset({"Inspect"}), default_defer="Defer")
BOILER_FEATURES = ("is_recurrent", "is_high_pressure", "neighborhood_risk", "is_internal",
                   "has_lff_45", "has_lff_180", "boiler_count_norm")

# P(flag = 1 | defect), P(flag = 1 | no defect) for the binary intake flags
DEFAULT_FLAG_LIKELIHOODS = {
    "is_recurrent": (0.65, 0.15),
    "is_high_pressure": (0.45, 0.20),
    "is_internal": (0.40, 0.25),
    "has_lff_45": (0.45, 0.08),
    "has_lff_180": (0.60, 0.20),
}


class BoilerEnv(ComplaintEnv):
    """One complaint arrives per step and is resolved in the same step.

    Binary flags come from defect-conditional likelihoods; each flag is lost
    (reads 0) with probability ``1 - intake_quality`` of the complaint's tract.
    An outcome record is written only when the complaint is inspected.
    """

    kind = "boiler"
    actions = BOILER_ACTIONS
    feature_names = BOILER_FEATURES
    equity_sensitive = frozenset({"neighborhood_risk"})
    binary_features = frozenset(DEFAULT_FLAG_LIKELIHOODS)

    def __init__(self, *args, flag_likelihoods: dict | None = None, risk_noise: float = 0.02,
                 count_shift: float = 0.3, **kwargs):
        likelihoods = dict(DEFAULT_FLAG_LIKELIHOODS)
        likelihoods.update(flag_likelihoods or {})
        for name, pair in likelihoods.items():
            if name not in DEFAULT_FLAG_LIKELIHOODS:
                raise ConfigurationError(f"unknown boiler flag {name!r}")
            if len(pair) != 2 or not all(0.0 <= p <= 1.0 for p in pair):
                raise ConfigurationError(f"flag likelihoods for {name} must be two probabilities")
        self.flag_likelihoods = {k: (float(a), float(b)) for k, (a, b) in likelihoods.items()}
        self.risk_noise = float(risk_noise)
        # mean shift of the (never masked) boiler-count feature on defective complaints
        self.count_shift = float(count_shift)
        super().__init__(*args, **kwargs)

    def _reset_dynamics(self) -> None:
        self.current = self._new_complaint()

    def _observe(self) -> np.ndarray:
        return np.array(self.current.features, dtype=float)

    def _features(self, tract: TractProfile, defect: bool) -> list[float]:
        rng = self.rng
        flags = {}
        for name, (p_defect, p_clean) in self.flag_likelihoods.items():
            on = rng.random() < (p_defect if defect else p_clean)
            kept = rng.random() < tract.intake_quality
            flags[name] = float(on and kept)
        risk = float(np.clip(self.risk[tract.tract_id] + rng.normal(0.0, self.risk_noise), 0.0, 1.0))
        count = float(np.clip(0.35 + self.count_shift * defect + rng.normal(0.0, 0.15), 0.0, 1.0))
        return [flags["is_recurrent"], flags["is_high_pressure"], risk, flags["is_internal"],
                flags["has_lff_45"], flags["has_lff_180"], count]

    def _apply(self, label: str):
        event = self.current
        stratum = self.stratum_of(event.tract_id)
        escalated = self.actions.is_escalating(label)
        defect = event.latent_defect
        info = {"tract_id": event.tract_id, "stratum": stratum, "escalated": escalated,
                "defect": defect, "recorded": escalated, "new_complaint": True, "bonus": 0.0}
        if escalated:
            if self.exploration_bonus and not self._escalated_recently(event.tract_id):
                info["bonus"] = self.exploration_bonus
            self._note_escalation(event.tract_id)
            self._record(event, defect)
            self.resolved += 1
        else:
            self.dropped += 1
        outcome = StepOutcome(label, escalated, defect, missed=defect and not escalated)
        return [(outcome, stratum)], info

    def _advance(self) -> None:
        self.current = self._new_complaint()
