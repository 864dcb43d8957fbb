"""Uniform policy interface and its versioned text serialisation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from equitriage.agents.mlp import MLP
from equitriage.domain import ActionSet
from equitriage.errors import ConfigurationError, FingerprintMismatch, ValidationError

POLICY_FORMAT = "equitriage-policy"
POLICY_VERSION = 1
POLICY_KINDS = ("tabular_q", "dqn", "reinforce", "behavioral_clone", "heuristic")


@dataclass(frozen=True)
class Discretizer:
    """Continuous features go to ``n_bins`` equal-width bins on [0, 1]; binary ones pass through."""

    binary: tuple[bool, ...]
    n_bins: int = 4

    def key(self, obs) -> tuple[int, ...]:
        out = []
        for x, is_binary in zip(obs, self.binary):
            if is_binary:
                out.append(int(x >= 0.5))
            else:
                out.append(min(int(float(x) * self.n_bins), self.n_bins - 1) if x > 0 else 0)
        return tuple(out)


def key_to_text(key: tuple[int, ...]) -> str:
    return ",".join(str(k) for k in key)


def text_to_key(text: str) -> tuple[int, ...]:
    return tuple(int(k) for k in text.split(",")) if text else ()


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Policy:
    """Maps observation vectors to action indices.

    ``params`` depends on ``kind``: a Q table, a majority-action table, a
    Q network, a policy network, or a heuristic rule spec. Greedy mode is
    deterministic; stochastic mode samples (REINFORCE and random heuristic).
    """

    kind: str
    actions: ActionSet
    obs_dim: int
    params: dict
    mode: str = "greedy"
    discretizer: Discretizer | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigurationError(f"unknown policy kind {self.kind!r}")
        if self.mode not in ("greedy", "stochastic"):
            raise ConfigurationError(f"unknown policy mode {self.mode!r}")

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    # --- decisions -----------------------------------------------------

    def action_values(self, obs) -> np.ndarray:
        """Per-action scores: Q values, probabilities, or rule indicators."""
        obs = np.asarray(obs, dtype=float)
        if self.kind == "tabular_q":
            return np.array(self.params["q"].get(self.discretizer.key(obs), np.zeros(self.n_actions)))
        if self.kind == "behavioral_clone":
            a = self.params["table"].get(self.discretizer.key(obs), self.params["fallback"])
            return np.eye(self.n_actions)[a]
        if self.kind == "dqn":
            return self.params["net"](obs)[0]
        if self.kind == "reinforce":
            return softmax(self.params["net"](obs)[0])
        from equitriage.agents.heuristics import heuristic_values
        return heuristic_values(self, obs)

    def act(self, obs, rng: np.random.Generator | None = None) -> int:
        values = self.action_values(obs)
        if self.kind == "heuristic" and self.params["rule"] == "random":
            if rng is None:
                raise ConfigurationError("random policy needs a generator")
            return int(rng.integers(self.n_actions))
        if self.mode == "stochastic" and self.kind == "reinforce":
            if rng is None:
                raise ConfigurationError("stochastic policy needs a generator")
            return int(rng.choice(self.n_actions, p=values))
        return int(np.argmax(values))

    def act_label(self, obs, rng=None) -> str:
        return self.actions.labels[self.act(obs, rng)]

    def escalation_score(self, X: np.ndarray) -> np.ndarray:
        """Value of the best escalating action for each row; the attribution target."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        esc = list(self.actions.escalating_indices)
        if self.kind in ("dqn", "reinforce"):
            out = self.params["net"](X)
            if self.kind == "reinforce":
                out = softmax(out)
            return out[:, esc].max(axis=1)
        return np.array([self.action_values(x)[esc].max() for x in X])

    def with_mode(self, mode: str) -> "Policy":
        return Policy(self.kind, self.actions, self.obs_dim, self.params, mode, self.discretizer, dict(self.meta))

    # --- persistence ---------------------------------------------------

    def _params_to_json(self) -> dict:
        if self.kind == "tabular_q":
            return {"q": {key_to_text(k): [float(v) for v in q] for k, q in sorted(self.params["q"].items())}}
        if self.kind == "behavioral_clone":
            return {"table": {key_to_text(k): int(a) for k, a in sorted(self.params["table"].items())},
                    "fallback": int(self.params["fallback"])}
        if self.kind in ("dqn", "reinforce"):
            out = {"net": self.params["net"].to_dict()}
            if "baseline" in self.params:
                out["baseline"] = self.params["baseline"].to_dict()
            return out
        return dict(self.params)

    def to_json(self, fingerprint: str = "", env_signature: dict | None = None) -> str:
        doc = {
            "format": POLICY_FORMAT,
            "version": POLICY_VERSION,
            "kind": self.kind,
            "mode": self.mode,
            "obs_dim": self.obs_dim,
            "actions": list(self.actions.labels),
            "escalating": sorted(self.actions.escalating),
            "default_defer": self.actions.default_defer,
            "discretizer": None if self.discretizer is None else {
                "binary": list(self.discretizer.binary), "n_bins": self.discretizer.n_bins},
            "fingerprint": fingerprint,
            "env": env_signature or {},
            "meta": self.meta,
            "params": self._params_to_json(),
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str, expect_env: dict | None = None) -> "Policy":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"policy file is not valid JSON: {exc}") from exc
        if doc.get("format") != POLICY_FORMAT:
            raise ValidationError("not a policy file")
        if doc.get("version") != POLICY_VERSION:
            raise ValidationError(f"unsupported policy version {doc.get('version')}")
        if expect_env is not None and doc.get("env") and doc["env"] != expect_env:
            raise FingerprintMismatch(
                f"policy was trained for {doc['env']} but the environment is {expect_env}")
        actions = ActionSet(tuple(doc["actions"]), frozenset(doc["escalating"]), doc.get("default_defer"))
        disc = None
        if doc.get("discretizer"):
            disc = Discretizer(tuple(bool(b) for b in doc["discretizer"]["binary"]), doc["discretizer"]["n_bins"])
        kind, raw = doc["kind"], doc["params"]
        if kind == "tabular_q":
            params = {"q": {text_to_key(k): np.array(v, dtype=float) for k, v in raw["q"].items()}}
        elif kind == "behavioral_clone":
            params = {"table": {text_to_key(k): int(a) for k, a in raw["table"].items()},
                      "fallback": int(raw["fallback"])}
        elif kind in ("dqn", "reinforce"):
            params = {"net": MLP.from_dict(raw["net"])}
            if "baseline" in raw:
                params["baseline"] = MLP.from_dict(raw["baseline"])
        else:
            params = dict(raw)
        policy = cls(kind, actions, int(doc["obs_dim"]), params, doc.get("mode", "greedy"), disc, doc.get("meta", {}))
        policy.source_fingerprint = doc.get("fingerprint", "")
        policy.source_env = doc.get("env", {})
        return policy


def binary_mask(env) -> tuple[bool, ...]:
    return tuple(name in getattr(env, "binary_features", ()) for name in env.feature_names)
