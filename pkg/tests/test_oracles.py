"""The frozen oracle table must match a fresh independent derivation."""
from __future__ import annotations

import numpy as np
import pytest

import oracle_values
from oracles import derive


@pytest.fixture(scope="module")
def fresh():
    return derive.values()


def test_every_frozen_value_is_reproduced(fresh):
    frozen = {k: v for k, v in vars(oracle_values).items() if k.isupper()}
    assert set(frozen) == set(fresh)
    for name, value in fresh.items():
        np.testing.assert_allclose(np.asarray(frozen[name], dtype=float), np.asarray(value, dtype=float),
                                   rtol=0, atol=1e-12, err_msg=name)


def test_chain_oracle_prefers_repeating_left(fresh):
    q = np.array(fresh["CHAIN10_Q"])
    assert q.shape == (9, 2)
    assert q[0, 0] == pytest.approx(0.1 / (1 - 0.95))
    assert q[-1, 1] == 1.0
