"""Small exactly-solvable MDPs for checking the learners against oracles."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from equitriage.domain import ActionSet
from equitriage.errors import ConfigurationError


@dataclass(frozen=True)
class ToyStep:
    observation: np.ndarray
    action: str
    reward: float
    next_observation: np.ndarray
    terminal: bool
    info: dict = field(default_factory=dict)

    @property
    def training_reward(self) -> float:
        return self.reward


class DeterministicChain:
    """States ``0..n-1`` on a line with actions left and right.

    Moving right into the last state pays ``goal_reward`` and ends the
    episode. Taking left in state 0 pays ``left_reward``; it ends the episode
    when ``left_terminal`` is set and otherwise stays in state 0.
    Observations are one-hot state vectors.
    """

    kind = "chain"
    actions = ActionSet(("left", "right"), frozenset({"right"}), default_defer="left")

    def __init__(self, n_states: int = 10, goal_reward: float = 1.0, left_reward: float = 0.1,
                 left_terminal: bool = False, horizon: int = 100, start: int = 0):
        if n_states < 2:
            raise ConfigurationError("chain needs at least 2 states")
        self.n_states = n_states
        self.goal_reward = goal_reward
        self.left_reward = left_reward
        self.left_terminal = left_terminal
        self.horizon = horizon
        self.start = start
        self.feature_names = tuple(f"s{i}" for i in range(n_states))

    @property
    def obs_dim(self) -> int:
        return self.n_states

    @property
    def n_actions(self) -> int:
        return 2

    def signature(self) -> dict:
        return {"kind": self.kind, "obs_dim": self.obs_dim, "actions": list(self.actions.labels)}

    def model(self, s: int, a: int) -> tuple[int, float, bool]:
        """Deterministic transition: ``(next state, reward, terminal)``."""
        if a == 1:
            nxt = s + 1
            if nxt == self.n_states - 1:
                return nxt, self.goal_reward, True
            return nxt, 0.0, False
        if s == 0:
            return 0, self.left_reward, self.left_terminal
        return s - 1, 0.0, False

    def nonterminal_states(self) -> range:
        return range(self.n_states - 1)

    def one_hot(self, s: int) -> np.ndarray:
        x = np.zeros(self.n_states)
        x[s] = 1.0
        return x

    def reset(self, seed: int = 0) -> np.ndarray:
        self.state = self.start
        self.t = 0
        return self.one_hot(self.state)

    def step(self, action) -> ToyStep:
        a = self.actions.index(action) if isinstance(action, str) else int(action)
        obs = self.one_hot(self.state)
        nxt, r, done = self.model(self.state, a)
        self.state = nxt
        self.t += 1
        truncated = self.t >= self.horizon
        return ToyStep(obs, self.actions.labels[a], r, self.one_hot(nxt), done or truncated,
                       {"truncated": truncated and not done})


class TwoArmedBandit:
    """One-step episodes with a constant observation and fixed arm payoffs."""

    kind = "bandit"

    def __init__(self, payoffs=(1.0, 0.0), noise: float = 0.0, seed: int = 0):
        self.payoffs = tuple(float(p) for p in payoffs)
        self.noise = noise
        self.actions = ActionSet(tuple(f"arm{i}" for i in range(len(self.payoffs))), frozenset({"arm0"}))
        self.feature_names = ("bias",)
        self._rng = np.random.default_rng(seed)

    obs_dim = 1

    @property
    def n_actions(self) -> int:
        return len(self.payoffs)

    def signature(self) -> dict:
        return {"kind": self.kind, "obs_dim": 1, "actions": list(self.actions.labels)}

    def reset(self, seed: int = 0) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        return np.ones(1)

    def step(self, action) -> ToyStep:
        a = int(action)
        r = self.payoffs[a] + (self._rng.normal(0.0, self.noise) if self.noise else 0.0)
        return ToyStep(np.ones(1), self.actions.labels[a], r, np.ones(1), True)
