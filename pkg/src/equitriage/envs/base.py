"""Shared machinery for the complaint-stream environments."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from equitriage.calibration import TractWindow, corrected_denominators
from equitriage.correction import CalibrationConfig, CorrectedCounts
from equitriage.domain import ActionSet, ComplaintEvent, RewardWeights, TractProfile, stratum_labels
from equitriage.envs.city import CityConfig, generate_city
from equitriage.errors import ConfigurationError, ValidationError
from equitriage.reward import (
    EquityLedger,
    RewardBreakdown,
    RewardTables,
    StepOutcome,
    compose_reward,
    cost_term,
    retention_term,
    speed_term,
)
from equitriage.rng import substream


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: str
    reward: RewardBreakdown
    next_observation: np.ndarray
    terminal: bool
    info: dict = field(default_factory=dict)

    @property
    def training_reward(self) -> float:
        """Reward used by learners: the composed total plus any shaping bonus."""
        return self.reward.total + self.info.get("bonus", 0.0)


@dataclass(frozen=True)
class OutcomeRecord:
    """An observable inspection result. Exists only for escalated complaints."""

    step: int
    tract_id: str
    stratum: str | None
    defect: bool


class ComplaintStream:
    """Draws one complaint per step from the city's tracts.

    Tract ``z`` is picked with probability proportional to its incident rate
    times its reporting propensity. A report duplicates an incident already
    open in the same tract and incident window with probability
    ``duplicate_rate`` (default ``1 - propensity``); otherwise it opens a new
    incident whose defect is drawn at the base rate.
    """

    def __init__(self, tracts: list[TractProfile], defect_rate: float,
                 duplicate_rate: float | None, incident_window: int, rng: np.random.Generator):
        self.tracts = tracts
        weights = np.array([t.true_incident_rate * t.reporting_propensity for t in tracts])
        self.p = weights / weights.sum()
        self.defect_rate = defect_rate
        self.dup = np.array([1.0 - t.reporting_propensity if duplicate_rate is None else duplicate_rate
                             for t in tracts])
        self.incident_window = incident_window
        self.rng = rng
        self._open: dict[tuple[int, int], list[tuple[int, bool]]] = {}
        self._next_event = 0
        self._next_incident = 0

    def draw(self, step: int) -> tuple[int, int, bool, bool]:
        """Return ``(tract index, incident id, is_duplicate, latent defect)``."""
        z = int(self.rng.choice(len(self.tracts), p=self.p))
        key = (z, step // self.incident_window)
        open_incidents = self._open.setdefault(key, [])
        u = self.rng.random()
        if open_incidents and u < self.dup[z]:
            incident, defect = open_incidents[int(self.rng.integers(len(open_incidents)))]
            return z, incident, True, defect
        defect = bool(self.rng.random() < self.defect_rate)
        incident = self._next_incident
        self._next_incident += 1
        open_incidents.append((incident, defect))
        # forget windows that can no longer receive duplicates
        stale = [k for k in self._open if k[1] < step // self.incident_window]
        for k in stale:
            del self._open[k]
        return z, incident, False, defect

    def next_event_id(self) -> int:
        self._next_event += 1
        return self._next_event - 1


def window_table(tracts: list[TractProfile], complaints: list[tuple[int, str, bool]],
                 correct: Mapping[str, int] | None = None) -> list[TractWindow]:
    """Aggregate ``(step, tract_id, is_duplicate)`` rows into per-tract counts."""
    C = {t.tract_id: 0 for t in tracts}
    D = {t.tract_id: 0 for t in tracts}
    for _, tract, dup in complaints:
        C[tract] += 1
        D[tract] += int(dup)
    correct = correct or {}
    return [TractWindow(t.tract_id, C[t.tract_id], D[t.tract_id], t.covariates, t.stratum,
                        int(correct.get(t.tract_id, 0))) for t in tracts]


class ComplaintEnv:
    """Base environment: tracts, complaint stream, reward composition, equity ledger.

    Subclasses define the action set, features and per-step dynamics. One
    instance is owned by one runner.
    """

    kind = "base"
    actions: ActionSet
    feature_names: tuple[str, ...] = ()
    equity_sensitive: frozenset[str] = frozenset()
    binary_features: frozenset[str] = frozenset()

    def __init__(self, city: CityConfig | None = None, weights: RewardWeights | None = None,
                 tables: RewardTables | None = None, calibration: CalibrationConfig | None = None,
                 horizon: int | None = None, burn_in_steps: int | None = None,
                 incident_window: int = 168, denominators: CorrectedCounts | None = None,
                 exploration_bonus: float = 0.0, tracts: list[TractProfile] | None = None):
        self.city = city or CityConfig()
        self.weights = weights or RewardWeights()
        self.tables = tables or RewardTables()
        self.calibration = calibration or CalibrationConfig()
        self.horizon = int(horizon or self.city.steps_per_episode)
        if self.horizon < 1:
            raise ConfigurationError("horizon must be positive")
        if incident_window < 1:
            raise ConfigurationError("incident_window must be positive")
        if exploration_bonus < 0:
            raise ConfigurationError("exploration_bonus must be non-negative")
        self.incident_window = incident_window
        self.burn_in_steps = int(burn_in_steps or 4 * self.calibration.window_width)
        self.exploration_bonus = exploration_bonus
        self.tracts = tracts if tracts is not None else generate_city(self.city)
        self.tract_index = {t.tract_id: i for i, t in enumerate(self.tracts)}
        self.strata = stratum_labels(self.city.K)
        self.risk = {t.tract_id: t.neighborhood_risk for t in self.tracts}
        self.burn_in_report = None
        if denominators is None:
            denominators = self.burn_in_denominators()
        self.denominators = denominators
        self._done = True

    # --- calibration ---------------------------------------------------

    def burn_in_denominators(self) -> CorrectedCounts:
        """Estimate per-window denominators from a policy-free burn-in stream.

        Complaint and duplicate counts do not depend on the policy, so they can
        be drawn ahead of time. The corrected totals are rescaled from the
        burn-in length to one ledger window.
        """
        stream = ComplaintStream(self.tracts, self.city.defect_rate, self.city.duplicate_rate,
                                 self.incident_window, substream(self.city.seed, "burn_in"))
        rows = []
        for step in range(self.burn_in_steps):
            z, _, dup, _ = stream.draw(step)
            rows.append((step, self.tracts[z].tract_id, dup))
        table = window_table(self.tracts, rows)
        estimates, counts, proxy = corrected_denominators(
            table, self.calibration, self.strata, window=(0, self.burn_in_steps))
        self.burn_in_report = {"estimates": estimates, "counts": counts, "proxy": proxy, "rows": table}
        return counts.scaled(self.calibration.window_width / self.burn_in_steps)

    def set_denominators(self, counts: CorrectedCounts) -> None:
        """Atomic swap of the denominator snapshot; call only between episodes or cycles."""
        self.denominators = counts
        if hasattr(self, "ledger"):
            self.ledger.set_denominators(counts.N_hat, counts.raw_N)

    def set_risk(self, risk: Mapping[str, float]) -> None:
        for tract, value in risk.items():
            if tract not in self.tract_index:
                raise ValidationError(f"unknown tract {tract!r}")
            if not 0.0 <= value <= 1.0:
                raise ValidationError("neighbourhood risk must be in [0, 1]")
            self.risk[tract] = float(value)

    # --- interface -----------------------------------------------------

    @property
    def obs_dim(self) -> int:
        return len(self.feature_names)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def signature(self) -> dict:
        return {"kind": self.kind, "obs_dim": self.obs_dim, "actions": list(self.actions.labels)}

    def reset(self, seed: int = 0) -> np.ndarray:
        self.rng = substream(self.city.seed, "episode", self.kind, seed)
        self.stream = ComplaintStream(self.tracts, self.city.defect_rate, self.city.duplicate_rate,
                                      self.incident_window, self.rng)
        self.step_index = 0
        self.ledger = EquityLedger(self.strata, self.calibration.window_width,
                                   dict(self.denominators.N_hat), dict(self.denominators.raw_N),
                                   self.weights.equity_variant)
        self.records: list[OutcomeRecord] = []
        self.complaints: list[tuple[int, str, bool]] = []
        self.created = self.resolved = self.dropped = 0
        self.window_escalations: dict[str, list[int]] = {}
        self._done = False
        self._reset_dynamics()
        return self._observe()

    def step(self, action: int | str) -> Transition:
        if self._done:
            raise ConfigurationError("episode is over; call reset()")
        label = self._label(action)
        obs = self._observe()
        outcomes, info = self._apply(label)
        self.step_index += 1
        terminal = self.step_index >= self.horizon
        if terminal:
            outcomes = outcomes + self._finalize()
            self._done = True
        else:
            self._advance()
        self.ledger.advance(self.step_index - 1)
        for o, stratum in outcomes:
            if o.escalated:
                self.ledger.record(self.step_index - 1, stratum, o.defect)
        speed = sum(speed_term(o, self.tables) for o, _ in outcomes)
        cost = cost_term(StepOutcome(label, self.actions.is_escalating(label), False), self.tables, self.actions)
        retention = sum(retention_term(o, self.tables) for o, _ in outcomes)
        equity, skipped = self.ledger.value()
        reward = compose_reward((speed, cost, equity, retention), self.weights)
        info.update({
            "step": self.step_index - 1,
            "equity_skipped": skipped,
            "equity_counts": self.ledger.snapshot(),
            "outcomes": [(o.escalated, o.defect, o.missed, s) for o, s in outcomes],
        })
        next_obs = np.zeros(self.obs_dim) if terminal else self._observe()
        return Transition(obs, label, reward, next_obs, terminal, info)

    def _label(self, action) -> str:
        if isinstance(action, (int, np.integer)):
            if not 0 <= int(action) < self.n_actions:
                raise ConfigurationError(f"action index {action} out of range for {self.kind}")
            return self.actions.labels[int(action)]
        if action not in self.actions.labels:
            raise ConfigurationError(f"unknown action {action!r}; expected one of {self.actions.labels}")
        return action

    # --- helpers for subclasses ----------------------------------------

    def _new_complaint(self) -> ComplaintEvent:
        z, incident, dup, defect = self.stream.draw(self.step_index)
        tract = self.tracts[z]
        features = self._features(tract, defect)
        event = ComplaintEvent(self.stream.next_event_id(), tract.tract_id, self.step_index,
                               tuple(features), dup, incident, defect)
        self.complaints.append((self.step_index, tract.tract_id, dup))
        self.created += 1
        return event

    def _escalated_recently(self, tract_id: str) -> bool:
        cutoff = self.step_index - self.calibration.window_width
        steps = self.window_escalations.get(tract_id, [])
        return any(s > cutoff for s in steps)

    def _note_escalation(self, tract_id: str) -> None:
        self.window_escalations.setdefault(tract_id, []).append(self.step_index)

    def _record(self, event: ComplaintEvent, defect: bool) -> None:
        tract = self.tracts[self.tract_index[event.tract_id]]
        self.records.append(OutcomeRecord(self.step_index, event.tract_id, tract.stratum, defect))

    def stratum_of(self, tract_id: str) -> str | None:
        return self.tracts[self.tract_index[tract_id]].stratum

    def open_count(self) -> int:
        return 0

    # subclass hooks
    def _reset_dynamics(self) -> None:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError

    def _features(self, tract: TractProfile, defect: bool) -> list[float]:
        raise NotImplementedError

    def _apply(self, label: str) -> tuple[list[tuple[StepOutcome, str | None]], dict]:
        raise NotImplementedError

    def _advance(self) -> None:
        raise NotImplementedError

    def _finalize(self) -> list[tuple[StepOutcome, str | None]]:
        return []


# --- episodes ----------------------------------------------------------------

TRAJECTORY_FIELDS = ("step", "tract_id", "stratum", "action", "escalated", "defect", "speed", "cost",
                     "equity", "retention", "total", "bonus", "recorded")


@dataclass
class EpisodeLog:
    transitions: list[Transition]
    records: list[OutcomeRecord]
    complaints: list[tuple[int, str, bool]]
    summary: dict
    env_signature: dict

    def trajectory_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(TRAJECTORY_FIELDS + tuple(f"obs_{i}" for i in range(self.env_signature["obs_dim"])))
        for tr in self.transitions:
            i = tr.info
            w.writerow([i["step"], i.get("tract_id", ""), i.get("stratum") or "", tr.action,
                        int(i.get("escalated", False)), int(i.get("defect", False)),
                        repr(tr.reward.speed), repr(tr.reward.cost), repr(tr.reward.equity),
                        repr(tr.reward.retention), repr(tr.reward.total), repr(i.get("bonus", 0.0)),
                        int(i.get("recorded", False))] + [repr(float(x)) for x in tr.observation])
        return out.getvalue()

    def complaints_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["step", "tract_id", "is_duplicate"])
        for step, tract, dup in self.complaints:
            w.writerow([step, tract, int(dup)])
        return out.getvalue()


def _safe_ratio(a: float, b: float) -> float | None:
    return a / b if b > 0 else None


def summarize(env: ComplaintEnv, transitions: list[Transition]) -> dict:
    """Confusion counts, throughput and per-stratum rates for one episode.

    Per-stratum rates divide episode escalation counts by the per-window
    corrected denominators scaled to the episode length.
    """
    tp = fp = fn = tn = 0
    per = {g: {"complaints": 0, "escalations": 0, "correct_escalations": 0, "tp": 0, "fn": 0}
           for g in env.strata}
    total_cost = 0.0
    for tr in transitions:
        info = tr.info
        total_cost += tr.reward.cost
        g = info.get("stratum")
        if info.get("new_complaint") and g in per:
            per[g]["complaints"] += 1
        for escalated, defect, missed, stratum in info["outcomes"]:
            if escalated:
                tp += defect
                fp += not defect
            elif missed:
                fn += 1
            else:
                tn += 1
            if stratum in per:
                per[stratum]["escalations"] += escalated
                per[stratum]["correct_escalations"] += escalated and defect
                per[stratum]["tp"] += escalated and defect
                per[stratum]["fn"] += missed
    scale = len(transitions) / env.calibration.window_width
    rates = {}
    raw_rates = {}
    for g in env.strata:
        rates[g] = _safe_ratio(per[g]["correct_escalations"], env.denominators.N_hat.get(g, 0.0) * scale)
        raw_rates[g] = _safe_ratio(per[g]["correct_escalations"], per[g]["complaints"])
        per[g]["recall"] = _safe_ratio(per[g]["tp"], per[g]["tp"] + per[g]["fn"])
        per[g]["coverage"] = _safe_ratio(per[g]["escalations"], env.denominators.N_hat.get(g, 0.0) * scale)
    present = [r for r in rates.values() if r is not None]
    gap = max(present) - min(present) if len(present) >= 2 else 0.0
    return {
        "steps": len(transitions),
        "tp": tp, "fp": fp, "fn": fn, "tn": tn,
        "throughput": tp,
        "precision": _safe_ratio(tp, tp + fp),
        "recall": _safe_ratio(tp, tp + fn),
        "detection_rate": _safe_ratio(tp, tp + fn),
        "total_cost": total_cost,
        "return": float(sum(tr.reward.total for tr in transitions)),
        "equity_gap": gap,
        "rates": rates,
        "raw_rates": raw_rates,
        "per_stratum": per,
        "created": env.created, "resolved": env.resolved, "dropped": env.dropped,
        "open": env.open_count(),
        "records": len(env.records),
    }


def run_episode(env: ComplaintEnv, policy, seed: int = 0, explore_seed: int | None = None) -> EpisodeLog:
    """Roll out ``policy`` for one episode; deterministic in ``(env, policy, seed, explore_seed)``."""
    if getattr(policy, "obs_dim", env.obs_dim) != env.obs_dim or \
            getattr(policy, "n_actions", env.n_actions) != env.n_actions:
        raise ConfigurationError(
            f"policy shape ({policy.obs_dim} obs, {policy.n_actions} actions) does not match "
            f"{env.kind} env ({env.obs_dim} obs, {env.n_actions} actions)")
    rng = substream(seed if explore_seed is None else explore_seed, "policy")
    obs = env.reset(seed)
    transitions = []
    while True:
        tr = env.step(policy.act(obs, rng))
        transitions.append(tr)
        if tr.terminal:
            break
        obs = tr.next_observation
    return EpisodeLog(transitions, list(env.records), list(env.complaints),
                      summarize(env, transitions), env.signature())
