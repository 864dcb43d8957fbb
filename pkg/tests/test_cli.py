from __future__ import annotations

import json
from pathlib import Path

import pytest

from equitriage.cli import SUBCOMMANDS, main
from equitriage.config import ExperimentConfig, apply_overrides
from equitriage.errors import ConfigurationError

ROOT = Path(__file__).resolve().parents[1]
SMOKE = str(ROOT / "configs" / "smoke.yaml")


@pytest.fixture(scope="module")
def smoke_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    policy_dir = base / "train"
    assert main(["train", SMOKE, "--out", str(policy_dir)]) == 0
    runs = {"train": policy_dir}
    for cmd in SUBCOMMANDS:
        if cmd == "train":
            continue
        extra = ["--policy", str(policy_dir / "policy.json")] if cmd in ("simulate", "evaluate", "audit") else []
        assert main([cmd, SMOKE, "--out", str(base / cmd), *extra]) == 0, cmd
        runs[cmd] = base / cmd
    return runs


def test_every_artifact_carries_the_fingerprint(smoke_runs):
    fingerprint = ExperimentConfig.load(SMOKE).fingerprint()
    for cmd, root in smoke_runs.items():
        files = sorted(root.iterdir())
        assert files, cmd
        for path in files:
            text = path.read_text()
            if path.suffix == ".csv":
                assert text.startswith(f"# config_fingerprint={fingerprint}\n"), path
            elif path.name == "policy.json":
                assert json.loads(text)["fingerprint"] == fingerprint
            else:
                assert json.loads(text)["config_fingerprint"] == fingerprint, path


def test_expected_artifacts(smoke_runs):
    expected = {
        "simulate": {"config.json", "trajectory.csv", "complaints.csv", "summary.json"},
        "train": {"config.json", "policy.json", "training_trace.json"},
        "evaluate": {"config.json", "evaluation.csv", "evaluation.json"},
        "calibrate": {"config.json", "calibration_report.json", "corrected_counts.csv", "policy.json"},
        "audit": {"config.json", "audit_report.json", "audit_data.csv"},
        "sweep": {"config.json", "sweep.csv", "frontier.csv", "sweep_summary.json"},
        "feedback": {"config.json", "coverage.csv", "feedback.json"},
    }
    for cmd, names in expected.items():
        assert {p.name for p in smoke_runs[cmd].iterdir()} == names, cmd


def test_evaluate_writes_one_row_per_seed_and_a_summary(smoke_runs):
    lines = (smoke_runs["evaluate"] / "evaluation.csv").read_text().splitlines()
    body = [line for line in lines if not line.startswith("#")]
    assert body[0].startswith("seed,eval_seed,")
    assert len(body) == 1 + 3 + 1
    assert body[-1].startswith("mean±sd,")


def test_evaluate_five_seed_benchmark(tmp_path):
    code = main(["evaluate", SMOKE, "--out", str(tmp_path), "--set", "seeds=[0,1,2,3,4]"])
    assert code == 0
    body = [line for line in (tmp_path / "evaluation.csv").read_text().splitlines() if not line.startswith("#")]
    assert len(body) == 1 + 5 + 1


def test_sweep_summary_reports_price_of_equity(smoke_runs):
    doc = json.loads((smoke_runs["sweep"] / "sweep_summary.json").read_text())
    assert doc["price_of_equity"]["status"] in ("parity attained", "parity unattained")


def test_policy_for_other_environment_is_rejected(smoke_runs, tmp_path, capsys):
    code = main(["evaluate", SMOKE, "--out", str(tmp_path), "--set", "env.kind=scaffold",
                 "--policy", str(smoke_runs["train"] / "policy.json")])
    assert code == 1
    record = json.loads(capsys.readouterr().err)
    assert record["error"] == "fingerprint_mismatch"


def test_invalid_config_exits_with_configuration_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("env: {kind: boiler, horizon: 0}\n")
    assert main(["simulate", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "configuration"
    assert not (tmp_path / "o").exists()


def test_missing_config_file(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "nope.yaml")]) == 2


def test_unknown_key_rejected():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"agent": {"kind": "dqn", "hpyer": {}}})


def test_overrides_parse_yaml_values():
    data = apply_overrides({}, ["agent.hyper.hidden=[8, 8]", "env.horizon=50", "name=x"])
    assert data == {"agent": {"hyper": {"hidden": [8, 8]}}, "env": {"horizon": 50}, "name": "x"}
    with pytest.raises(ConfigurationError):
        apply_overrides({}, ["no-equals-sign"])


def test_fingerprint_ignores_output_dir_only():
    a = ExperimentConfig.from_dict({"output_dir": "a"})
    b = ExperimentConfig.from_dict({"output_dir": "b"})
    c = ExperimentConfig.from_dict({"seeds": [1, 2, 3]})
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_simulate_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", SMOKE, "--out", str(tmp_path / name), "--seed", "3"]) == 0
    for path in (tmp_path / "a").iterdir():
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()
