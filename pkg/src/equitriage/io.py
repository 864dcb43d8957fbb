"""Artifact writing: canonical JSON, fingerprinted delimited tables, policy files."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from equitriage.agents.policy import Policy
from equitriage.errors import ConfigurationError


def to_jsonable(value):
    """Plain JSON types; non-finite floats become ``None`` so output stays strict JSON."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def dumps(doc) -> str:
    return json.dumps(to_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


class ArtifactWriter:
    """Writes every artifact of one run into ``root``, stamping the config fingerprint."""

    def __init__(self, root: str | Path, fingerprint: str):
        self.root = Path(root)
        self.fingerprint = fingerprint
        self.root.mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []

    def _path(self, name: str) -> Path:
        self.written.append(name)
        return self.root / name

    def json(self, name: str, doc: dict) -> Path:
        path = self._path(name)
        path.write_text(dumps({**doc, "config_fingerprint": self.fingerprint}))
        return path

    def table(self, name: str, csv_text: str) -> Path:
        """Delimited text with a leading ``# config_fingerprint=`` comment line."""
        path = self._path(name)
        path.write_text(f"# config_fingerprint={self.fingerprint}\n{csv_text}")
        return path

    def policy(self, name: str, policy: Policy, env_signature: dict) -> Path:
        path = self._path(name)
        path.write_text(policy.to_json(self.fingerprint, env_signature))
        return path


def read_table(path: str | Path) -> str:
    """Table text without the fingerprint comment line."""
    text = Path(path).read_text()
    lines = text.splitlines(keepends=True)
    return "".join(line for line in lines if not line.startswith("#"))


def load_policy(path: str | Path, env) -> Policy:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"policy file not found: {path}")
    return Policy.from_json(path.read_text(), expect_env=env.signature())
