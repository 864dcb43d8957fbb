"""One entry point that trains any supported agent kind on an environment."""
from __future__ import annotations

from dataclasses import fields

from equitriage.agents.dqn import DQNConfig, dqn_train
from equitriage.agents.heuristics import heuristic_policy
from equitriage.agents.policy import Policy
from equitriage.agents.reinforce import ReinforceConfig, reinforce_train
from equitriage.agents.schedule import EpsilonSchedule
from equitriage.agents.tabular import behavioral_clone, logged_pairs, make_discretizer, tabular_q_train
from equitriage.errors import ConfigurationError

AGENT_KINDS = ("tabular_q", "dqn", "reinforce", "behavioral_clone", "heuristic")


def _dataclass_from(cls, hyper: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(hyper) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} fields {sorted(unknown)}")
    values = dict(hyper)
    if "epsilon" in values and isinstance(values["epsilon"], dict):
        values["epsilon"] = EpsilonSchedule(**values["epsilon"])
    for key in ("hidden", "policy_hidden", "baseline_hidden"):
        if key in values:
            values[key] = tuple(values[key])
    return cls(**values)


def train_policy(kind: str, env, hyper: dict | None = None, seed: int = 0,
                 trace: dict | None = None) -> Policy:
    hyper = dict(hyper or {})
    if kind == "tabular_q":
        schedule = EpsilonSchedule(**hyper.pop("epsilon", {}))
        episodes = int(hyper.pop("episodes", 200))
        alpha = float(hyper.pop("alpha", 0.1))
        gamma = float(hyper.pop("gamma", 0.95))
        if hyper:
            raise ConfigurationError(f"unknown tabular_q fields {sorted(hyper)}")
        return tabular_q_train(env, episodes, alpha, gamma, schedule, seed, trace=trace)
    if kind == "dqn":
        return dqn_train(env, _dataclass_from(DQNConfig, hyper), seed, trace)
    if kind == "reinforce":
        return reinforce_train(env, _dataclass_from(ReinforceConfig, hyper), seed, trace).with_mode("greedy")
    if kind == "behavioral_clone":
        from equitriage.envs.base import run_episode
        source = heuristic_policy(hyper.pop("source", "balanced"), env.actions, env.obs_dim,
                                  env.feature_names, env.kind)
        episodes = int(hyper.pop("episodes", 5))
        if hyper:
            raise ConfigurationError(f"unknown behavioral_clone fields {sorted(hyper)}")
        logs = [run_episode(env, source, seed * 1000 + i) for i in range(episodes)]
        return behavioral_clone(logged_pairs(logs, env.actions), env.actions, env.obs_dim, make_discretizer(env))
    if kind == "heuristic":
        return heuristic_policy(hyper.pop("rule", "balanced"), env.actions, env.obs_dim,
                                env.feature_names, env.kind, hyper.pop("threshold", None),
                                hyper.pop("score_features", None))
    raise ConfigurationError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")
