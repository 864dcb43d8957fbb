from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from equitriage.correction import CalibrationConfig  # noqa: E402
from equitriage.domain import RewardWeights  # noqa: E402
from equitriage.envs import BoilerEnv, ScaffoldEnv  # noqa: E402
from equitriage.envs.city import CityConfig  # noqa: E402
from equitriage.reward import RewardTables  # noqa: E402


def make_boiler(seed: int = 0, horizon: int = 200, **kwargs) -> BoilerEnv:
    weights = kwargs.pop("weights", RewardWeights(1.0, 1.0, 0.0, 1.0))
    tables = kwargs.pop("tables", RewardTables())
    calibration = kwargs.pop("calibration", CalibrationConfig())
    city = kwargs.pop("city", CityConfig(seed=seed))
    return BoilerEnv(city, weights, tables, calibration, horizon=horizon, **kwargs)


def make_scaffold(seed: int = 0, horizon: int = 200, **kwargs) -> ScaffoldEnv:
    weights = kwargs.pop("weights", RewardWeights(1.0, 1.0, 0.2, 1.0))
    city = kwargs.pop("city", CityConfig(seed=seed))
    return ScaffoldEnv(city, weights, RewardTables(), CalibrationConfig(), horizon=horizon, **kwargs)


@pytest.fixture
def boiler():
    return make_boiler()


@pytest.fixture
def scaffold():
    return make_scaffold()


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
