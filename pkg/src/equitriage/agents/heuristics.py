"""Baseline rules: random, always escalate, always defer, and a threshold heuristic."""
from __future__ import annotations

import numpy as np

from equitriage.agents.policy import Policy
from equitriage.domain import ActionSet
from equitriage.errors import ConfigurationError

HEURISTIC_KINDS = ("random", "always_escalate", "always_defer", "balanced")

# severity features averaged by the balanced rule, per environment kind
BALANCED_DEFAULTS = {
    "boiler": {"score_features": ["is_recurrent", "is_high_pressure", "has_lff_45", "has_lff_180"],
               "threshold": 0.25},
    "scaffold": {"score_features": ["recurrent_7d", "open_count"], "threshold": 0.3},
}


def heuristic_policy(kind: str, actions: ActionSet, obs_dim: int, feature_names=None,
                     env_kind: str | None = None, threshold: float | None = None,
                     score_features=None) -> Policy:
    """Build a rule-based policy.

    ``balanced`` approximates the incumbent agency practice: escalate when
    the mean of a few severity flags exceeds a fixed threshold, otherwise
    take the default deferral. Complaints are already served first in,
    first out by the environments.
    """
    if kind not in HEURISTIC_KINDS:
        raise ConfigurationError(f"unknown heuristic {kind!r}; expected one of {HEURISTIC_KINDS}")
    escalate = actions.escalating_indices[0] if actions.escalating_indices else None
    defer = actions.index(actions.default_defer) if actions.default_defer else None
    params: dict = {"rule": kind}
    if kind == "always_escalate":
        if escalate is None:
            raise ConfigurationError("action set has no escalating action")
        params["action"] = escalate
    elif kind == "always_defer":
        if defer is None:
            raise ConfigurationError("action set has no default deferral")
        params["action"] = defer
    elif kind == "balanced":
        defaults = BALANCED_DEFAULTS.get(env_kind or "", {})
        names = list(score_features or defaults.get("score_features", []))
        if feature_names is None or not names:
            raise ConfigurationError("balanced heuristic needs feature names and score features")
        missing = [n for n in names if n not in feature_names]
        if missing:
            raise ConfigurationError(f"score features {missing} not in observation")
        params.update(
            score_index=[list(feature_names).index(n) for n in names],
            threshold=float(defaults.get("threshold", 0.5) if threshold is None else threshold),
            escalate=escalate,
            defer=defer,
        )
    return Policy("heuristic", actions, obs_dim, params)


def balanced_score(policy: Policy, obs) -> float:
    idx = policy.params["score_index"]
    return float(np.mean(np.asarray(obs, dtype=float)[idx]))


def heuristic_values(policy: Policy, obs) -> np.ndarray:
    rule = policy.params["rule"]
    values = np.zeros(policy.n_actions)
    if rule == "random":
        return values + 1.0 / policy.n_actions
    if rule in ("always_escalate", "always_defer"):
        values[policy.params["action"]] = 1.0
        return values
    score = balanced_score(policy, obs)
    values[policy.params["escalate"] if score > policy.params["threshold"] else policy.params["defer"]] = 1.0
    return values
