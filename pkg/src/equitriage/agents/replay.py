"""FIFO experience replay that recomputes the equity term at sampling time."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from equitriage.domain import RewardWeights


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """Ring buffer of transitions with uniform sampling.

    Rewards are not stored as scalars. Each slot keeps the speed, cost and
    retention components, the shaping bonus, and the per-stratum correct
    escalation counts of the equity window. The equity component is rebuilt
    from the current denominator snapshot whenever a batch is drawn, so a
    calibration cycle that swaps denominators reaches every stored transition.
    Without strata the buffer stores plain scalar rewards.
    """

    def __init__(self, capacity: int, obs_dim: int, strata: Sequence[str] = (),
                 weights: RewardWeights | None = None, N_hat: Mapping[str, float] | None = None,
                 N_raw: Mapping[str, float] | None = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.strata = tuple(strata)
        self.weights = weights or RewardWeights()
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.dones = np.zeros(capacity)
        # columns: speed, cost, retention, bonus, scalar reward
        self.parts = np.zeros((capacity, 5))
        self.counts = np.zeros((capacity, len(self.strata)))
        self.size = 0
        self._next = 0
        self.N_hat = dict(N_hat or {})
        self.N_raw = dict(N_raw or {})

    def __len__(self) -> int:
        return self.size

    def set_denominators(self, N_hat: Mapping[str, float], N_raw: Mapping[str, float] | None = None) -> None:
        self.N_hat = dict(N_hat)
        if N_raw is not None:
            self.N_raw = dict(N_raw)

    def _slot(self) -> int:
        i = self._next
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def add(self, obs, action: int, reward: float, next_obs, done: bool) -> None:
        """Store a transition with a precomputed scalar reward."""
        i = self._slot()
        self.obs[i], self.actions[i], self.next_obs[i], self.dones[i] = obs, action, next_obs, float(done)
        self.parts[i] = (0.0, 0.0, 0.0, 0.0, reward)
        self.counts[i] = 0.0

    def add_transition(self, transition, action: int) -> None:
        """Store an environment transition, keeping its reward decomposed."""
        i = self._slot()
        r = transition.reward
        self.obs[i] = transition.observation
        self.actions[i] = action
        self.next_obs[i] = transition.next_observation
        self.dones[i] = float(transition.terminal)
        self.parts[i] = (r.speed, r.cost, r.retention, transition.info.get("bonus", 0.0), np.nan)
        counts = transition.info.get("equity_counts", {})
        self.counts[i] = [counts.get(g, 0) for g in self.strata]

    def equity_values(self, idx: np.ndarray) -> np.ndarray:
        """Equity component for stored rows under the current denominators."""
        variant = self.weights.equity_variant
        denominators = self.N_raw if variant == "biased" else self.N_hat
        N = np.array([denominators.get(g, 0.0) for g in self.strata], dtype=float)
        if not self.strata or np.any(N <= 0):
            return np.zeros(len(idx))
        rates = self.counts[idx] / N
        if variant == "variance":
            return -rates.var(axis=1)
        return -(rates.max(axis=1) - rates.min(axis=1))

    def rewards_for(self, idx: np.ndarray) -> np.ndarray:
        a1, a2, a3, a4 = self.weights.as_tuple()
        parts = self.parts[idx]
        scalar = parts[:, 4]
        composed = a1 * parts[:, 0] - a2 * parts[:, 1] + a4 * parts[:, 2] + parts[:, 3]
        if a3:
            composed = composed + a3 * self.equity_values(idx)
        return np.where(np.isnan(scalar), composed, scalar)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.obs[idx], self.actions[idx], self.rewards_for(idx), self.next_obs[idx], self.dones[idx])
