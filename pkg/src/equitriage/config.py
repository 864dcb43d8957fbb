"""Experiment configuration: YAML schema, validation, overrides and content fingerprint.

Schema (every section optional, defaults shown in ``DEFAULTS``)::

    name: str
    env:         {kind: boiler|scaffold, horizon, burn_in_steps, incident_window,
                  exploration_bonus, params: {environment-specific keyword arguments}}
    city:        CityConfig fields
    agent:       {kind: tabular_q|dqn|reinforce|behavioral_clone|heuristic, hyper: {...}}
    weights:     {alpha_speed, alpha_cost, alpha_equity, alpha_retention, equity_variant}
    tables:      RewardTables fields
    calibration: CalibrationConfig fields
    seeds:       list of ints
    evaluation:  {episodes, horizon, seed_base}
    sweep:       {axis: alpha_equity|w_miss, values: [...], base: [speed, cost, retention],
                  eval_episodes}
    feedback:    FeedbackLoopConfig fields plus {mitigations: [...], agent: kind}
    audit:       {instances, n_repeats, top_k, sampled_permutations}
    output_dir:  str
"""
from __future__ import annotations

import copy
import hashlib
import json
import inspect
from dataclasses import dataclass, fields, replace
from pathlib import Path

import yaml

from equitriage.agents.training import AGENT_KINDS
from equitriage.correction import CalibrationConfig
from equitriage.domain import RewardWeights, validate_weights
from equitriage.envs import ENV_KINDS
from equitriage.envs.city import CityConfig
from equitriage.errors import ConfigurationError
from equitriage.experiments import MITIGATIONS, FeedbackLoopConfig
from equitriage.reward import RewardTables

DEFAULTS: dict = {
    "name": "experiment",
    "env": {"kind": "boiler", "horizon": 1000, "burn_in_steps": None, "incident_window": 168,
            "exploration_bonus": 0.0, "params": {}},
    "city": {},
    "agent": {"kind": "dqn", "hyper": {}},
    "weights": {"alpha_speed": 1.0, "alpha_cost": 1.0, "alpha_equity": 0.0, "alpha_retention": 1.0,
                "equity_variant": "corrected"},
    "tables": {},
    "calibration": {},
    "seeds": [0, 1, 2, 3, 4],
    "evaluation": {"episodes": 1, "horizon": None, "seed_base": 10_000},
    "sweep": {"axis": "alpha_equity", "values": [0.0, 0.1, 0.2, 0.3], "base": [1.0, 1.0, 1.0],
              "eval_episodes": 3},
    "feedback": {"mitigations": ["none", "exploration_bonus"], "agent": "tabular_q"},
    "audit": {"instances": 20, "n_repeats": 5, "top_k": 5, "sampled_permutations": 200},
    "output_dir": "runs",
}

SWEEP_AXES = ("alpha_equity", "w_miss")


# sections whose keys are checked by the dataclass they feed, not by DEFAULTS
OPEN_SECTIONS = ("city.", "tables.", "calibration.", "feedback.", "env.params.", "agent.hyper.")


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in base and path not in OPEN_SECTIONS:
            raise ConfigurationError(f"unknown config key {path + key!r}")
        if isinstance(base.get(key), dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _build(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"unknown {section} fields {sorted(unknown)}")
    return cls(**values)


def _int_keys(ranges):
    return {int(k): tuple(v) for k, v in ranges.items()}


def _canonical(value):
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in sorted(value.items(), key=lambda kv: str(kv[0]))}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


@dataclass
class ExperimentConfig:
    """A fully validated experiment description; ``raw`` keeps the merged YAML tree."""

    raw: dict
    city: CityConfig
    weights: RewardWeights
    tables: RewardTables
    calibration: CalibrationConfig

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        if data is not None and not isinstance(data, dict):
            raise ConfigurationError("config must be a mapping")
        raw = _merge(DEFAULTS, data or {})
        try:
            city_values = dict(raw["city"])
            for key in ("incident_rate_range", "propensity_range", "intake_quality_range"):
                if key in city_values:
                    city_values[key] = _int_keys(city_values[key])
            city = _build(CityConfig, city_values, "city")
            weights = validate_weights(_build(RewardWeights, raw["weights"], "weights"))
            tables = _build(RewardTables, raw["tables"], "tables")
            calibration = _build(CalibrationConfig, raw["calibration"], "calibration")
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc
        config = cls(raw, city, weights, tables, calibration)
        config.validate()
        return config

    @classmethod
    def load(cls, path: str | Path, overrides: list[str] | tuple = ()) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
        return cls.from_dict(apply_overrides(data, overrides))

    def validate(self) -> None:
        env = self.raw["env"]
        if env["kind"] not in ENV_KINDS:
            raise ConfigurationError(f"unknown env kind {env['kind']!r}; expected one of {sorted(ENV_KINDS)}")
        if int(env["horizon"]) < 1:
            raise ConfigurationError("env.horizon must be positive")
        if self.raw["agent"]["kind"] not in AGENT_KINDS:
            raise ConfigurationError(f"unknown agent kind {self.raw['agent']['kind']!r}")
        seeds = self.raw["seeds"]
        if not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigurationError("seeds must be a non-empty list of non-negative integers")
        if len(set(seeds)) != len(seeds):
            raise ConfigurationError("seeds must be distinct")
        if int(self.raw["evaluation"]["episodes"]) < 1:
            raise ConfigurationError("evaluation.episodes must be positive")
        sweep = self.raw["sweep"]
        if sweep["axis"] not in SWEEP_AXES:
            raise ConfigurationError(f"sweep.axis must be one of {SWEEP_AXES}")
        if not sweep["values"]:
            raise ConfigurationError("sweep.values must be non-empty")
        if sweep["axis"] == "alpha_equity" and not all(0.0 <= v < 1.0 for v in sweep["values"]):
            raise ConfigurationError("alpha_equity sweep values must be in [0, 1)")
        if sweep["axis"] == "w_miss" and not all(v >= 0 for v in sweep["values"]):
            raise ConfigurationError("w_miss sweep values must be non-negative")
        for m in self.raw["feedback"]["mitigations"]:
            if m not in MITIGATIONS:
                raise ConfigurationError(f"unknown mitigation {m!r}")
        self.feedback_config("none")
        params = env["params"]
        cls = ENV_KINDS[env["kind"]]
        accepted = set(inspect.signature(cls.__init__).parameters)
        unknown = set(params) - accepted
        if unknown:
            raise ConfigurationError(f"unknown {env['kind']} env params {sorted(unknown)}")

    # --- derived views -----------------------------------------------------

    @property
    def env_kind(self) -> str:
        return self.raw["env"]["kind"]

    @property
    def agent_kind(self) -> str:
        return self.raw["agent"]["kind"]

    @property
    def agent_hyper(self) -> dict:
        return copy.deepcopy(self.raw["agent"]["hyper"])

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["seeds"])

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])

    def feedback_config(self, mitigation: str) -> FeedbackLoopConfig:
        values = {k: v for k, v in self.raw["feedback"].items() if k not in ("mitigations", "agent")}
        values["mitigation"] = mitigation
        try:
            return _build(FeedbackLoopConfig, values, "feedback")
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def make_env(self, *, seed: int | None = None, weights: RewardWeights | None = None,
                 tables: RewardTables | None = None, horizon: int | None = None):
        """Environment for this config; ``seed`` replaces the city seed when given."""
        env = self.raw["env"]
        city = self.city if seed is None else replace(self.city, seed=seed)
        return ENV_KINDS[env["kind"]](
            city, weights or self.weights, tables or self.tables, self.calibration,
            horizon=int(horizon or env["horizon"]), burn_in_steps=env["burn_in_steps"],
            incident_window=int(env["incident_window"]), exploration_bonus=float(env["exploration_bonus"]),
            **env["params"])

    def to_dict(self) -> dict:
        return _canonical(self.raw)

    def fingerprint(self) -> str:
        """sha256 of the canonical JSON form, ignoring where outputs are written."""
        content = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        text = json.dumps(content, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars or lists."""
    data = copy.deepcopy(data or {})
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key.path=value")
        key, text = item.split("=", 1)
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse override value {text!r}") from exc
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override path {key!r} crosses a non-mapping value")
        node[parts[-1]] = value
    return data

