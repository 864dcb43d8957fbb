"""Five-action scaffold-safety queue with age-dependent hazard."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from equitriage.domain import ActionSet, TractProfile
from equitriage.envs.base import ComplaintEnv
from equitriage.errors import ConfigurationError
from equitriage.reward import StepOutcome

SCAFFOLD_ACTIONS = ActionSet(("inspect_now", "delay", "batch", "escalate", "ignore"),
                             frozenset({"inspect_now", "escalate"}), default_defer="delay")
SCAFFOLD_FEATURES = ("created_count", "open_count", "recurrent_7d", "zip_freq_24h",
                     "time_since_last_resolution_h")


@dataclass
class QueueItem:
    event: object
    hazard_draw: float
    age: int = 0


def hazard_multiplier(age: int, slope: float = 0.1, cap: float = 2.0) -> float:
    return min(1.0 + slope * age, cap)


class ScaffoldEnv(ComplaintEnv):
    """Queue of open complaints; each step one arrives and the head is decided.

    ``delay`` moves the head to the tail and ``batch`` keeps it at the head,
    both one step older. Whether an item is defective is settled at
    resolution: it is defective iff its fixed uniform draw falls below
    ``defect_rate * hazard_multiplier(age)``. Ignored or still-open defects
    are charged the missed-defect penalty at episode end.
    """

    kind = "scaffold"
    actions = SCAFFOLD_ACTIONS
    feature_names = SCAFFOLD_FEATURES
    equity_sensitive = frozenset({"zip_freq_24h"})
    binary_features = frozenset({"recurrent_7d"})

    def __init__(self, *args, hazard_slope: float = 0.1, hazard_cap: float = 2.0,
                 recurrent_likelihood: tuple[float, float] = (0.6, 0.2), **kwargs):
        if hazard_slope < 0 or hazard_cap < 1:
            raise ConfigurationError("hazard curve must be non-decreasing and capped at >= 1")
        self.hazard_slope = hazard_slope
        self.hazard_cap = hazard_cap
        self.recurrent_likelihood = tuple(float(p) for p in recurrent_likelihood)
        super().__init__(*args, **kwargs)

    def defect_at(self, item: QueueItem) -> bool:
        p = self.city.defect_rate * hazard_multiplier(item.age, self.hazard_slope, self.hazard_cap)
        return bool(item.hazard_draw < p)

    def _reset_dynamics(self) -> None:
        self.queue: deque[QueueItem] = deque()
        self.ignored: list[QueueItem] = []
        self.last_resolution = {t.tract_id: -self.calibration.window_width for t in self.tracts}
        self.recent: deque[tuple[int, str]] = deque()
        self._arrive()

    def _arrive(self) -> None:
        event = self._new_complaint()
        # keep the latent defect consistent with the age-0 hazard draw
        draw = float(self.rng.random()) * self.city.defect_rate if event.latent_defect else \
            self.city.defect_rate + float(self.rng.random()) * (1.0 - self.city.defect_rate)
        self.queue.append(QueueItem(event, draw))
        self.recent.append((self.step_index, event.tract_id))

    def open_count(self) -> int:
        return len(self.queue)

    def _features(self, tract: TractProfile, defect: bool) -> list[float]:
        tid = tract.tract_id
        window = self.calibration.window_width
        recent = getattr(self, "recent", ())
        created = sum(1 for _, t in recent if t == tid)
        open_n = sum(1 for item in getattr(self, "queue", ()) if item.event.tract_id == tid)
        p = self.recurrent_likelihood[0] if defect else self.recurrent_likelihood[1]
        recurrent = float(self.rng.random() < p and self.rng.random() < tract.intake_quality)
        freq = sum(1 for s, t in recent if t == tid and s > self.step_index - 24)
        since = self.step_index - self.last_resolution.get(tid, -window) if hasattr(self, "last_resolution") else window
        return [min(created / 20.0, 1.0), min(open_n / 10.0, 1.0), recurrent, min(freq / 5.0, 1.0),
                min(since / window, 1.0)]

    def _observe(self) -> np.ndarray:
        return np.array(self.queue[0].event.features, dtype=float)

    def _apply(self, label: str):
        item = self.queue.popleft()
        event = item.event
        stratum = self.stratum_of(event.tract_id)
        info = {"tract_id": event.tract_id, "stratum": stratum, "escalated": False, "defect": False,
                "recorded": False, "new_complaint": item.age == 0, "bonus": 0.0, "age": item.age}
        outcomes = []
        if self.actions.is_escalating(label):
            defect = self.defect_at(item)
            if self.exploration_bonus and not self._escalated_recently(event.tract_id):
                info["bonus"] = self.exploration_bonus
            self._note_escalation(event.tract_id)
            self._record(event, defect)
            self.resolved += 1
            self.last_resolution[event.tract_id] = self.step_index
            info.update(escalated=True, defect=defect, recorded=True)
            outcomes.append((StepOutcome(label, True, defect), stratum))
        elif label == "ignore":
            self.dropped += 1
            self.ignored.append(item)
            # the miss is charged at episode end, the non-defect is a true negative now
            if not self.defect_at(item):
                outcomes.append((StepOutcome(label, False, False), stratum))
        elif label == "delay":
            self.queue.append(QueueItem(event, item.hazard_draw, item.age + 1))
        else:  # batch
            self.queue.appendleft(QueueItem(event, item.hazard_draw, item.age + 1))
        return outcomes, info

    def _advance(self) -> None:
        window = self.calibration.window_width
        while self.recent and self.recent[0][0] <= self.step_index - window:
            self.recent.popleft()
        self._arrive()

    def _finalize(self):
        outcomes = []
        for item in self.ignored + list(self.queue):
            if self.defect_at(item):
                stratum = self.stratum_of(item.event.tract_id)
                outcomes.append((StepOutcome("ignore", False, True, missed=True), stratum))
        return outcomes
