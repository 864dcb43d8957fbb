"""Tabular TD Q-learning and behavioural cloning over discretised states."""
from __future__ import annotations

from collections import Counter
from typing import Hashable, Iterable, MutableMapping

import numpy as np

from equitriage.agents.policy import Discretizer, Policy, binary_mask
from equitriage.agents.schedule import EpsilonSchedule
from equitriage.errors import InsufficientDataError, ValidationError
from equitriage.rng import child_seed, substream


def tabular_q_update(table: MutableMapping[Hashable, np.ndarray], state, action: int, reward: float,
                     next_state, terminal: bool, n_actions: int, alpha: float = 0.1,
                     gamma: float = 0.95) -> float:
    """One TD(0) Q-learning backup in place; returns the TD error.

    Unseen states start at zero. A terminal transition bootstraps from 0.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValidationError(f"alpha must be in (0, 1], got {alpha}")
    if not 0 <= action < n_actions:
        raise ValidationError(f"action {action} out of range")
    try:
        hash(state)
        hash(next_state)
    except TypeError:
        raise ValidationError("state keys must be hashable") from None
    q = table.setdefault(state, np.zeros(n_actions))
    future = 0.0 if terminal else float(table.get(next_state, np.zeros(n_actions)).max())
    td = reward + gamma * future - q[action]
    q[action] += alpha * td
    return float(td)


def make_discretizer(env, n_bins: int = 4) -> Discretizer:
    return Discretizer(binary_mask(env), n_bins)


def tabular_q_train(env, episodes: int, alpha: float = 0.1, gamma: float = 0.95,
                    schedule: EpsilonSchedule | None = None, seed: int = 0,
                    discretizer: Discretizer | None = None, trace: dict | None = None) -> Policy:
    """Epsilon-greedy Q-learning over ``episodes`` environment episodes."""
    schedule = schedule or EpsilonSchedule()
    disc = discretizer or make_discretizer(env)
    rng = substream(seed, "training", "tabular_q")
    n = env.n_actions
    table: dict = {}
    step = 0
    returns = []
    for ep in range(episodes):
        obs = env.reset(child_seed(seed, "train_episode", ep))
        key = disc.key(obs)
        total = 0.0
        while True:
            if rng.random() < schedule(step):
                a = int(rng.integers(n))
            else:
                a = int(np.argmax(table.get(key, np.zeros(n))))
            tr = env.step(a)
            nxt = disc.key(tr.next_observation)
            done = tr.terminal and not tr.info.get("truncated", False)
            tabular_q_update(table, key, a, tr.training_reward, nxt, done, n, alpha, gamma)
            total += tr.training_reward
            step += 1
            key = nxt
            if tr.terminal:
                break
        returns.append(total)
    if trace is not None:
        trace["episode_returns"] = returns
    return Policy("tabular_q", env.actions, env.obs_dim, {"q": table}, discretizer=disc,
                  meta={"alpha": alpha, "gamma": gamma, "episodes": episodes})


def behavioral_clone(logged: Iterable[tuple[np.ndarray, int]], actions, obs_dim: int,
                     discretizer: Discretizer) -> Policy:
    """Most common logged action per discretised state.

    Ties go to the lowest action index; states never seen in the log get the
    most common action overall.
    """
    per_state: dict[tuple, Counter] = {}
    overall: Counter = Counter()
    for obs, a in logged:
        a = int(a)
        per_state.setdefault(discretizer.key(obs), Counter())[a] += 1
        overall[a] += 1
    if not overall:
        raise InsufficientDataError("behavioural cloning needs a non-empty log")

    def majority(counter: Counter) -> int:
        best = max(counter.values())
        return min(a for a, c in counter.items() if c == best)

    table = {key: majority(c) for key, c in per_state.items()}
    return Policy("behavioral_clone", actions, obs_dim, {"table": table, "fallback": majority(overall)},
                  discretizer=discretizer)


def logged_pairs(episode_logs, actions) -> list[tuple[np.ndarray, int]]:
    """(observation, action index) pairs from environment episode logs."""
    return [(tr.observation, actions.index(tr.action)) for log in episode_logs for tr in log.transitions]
