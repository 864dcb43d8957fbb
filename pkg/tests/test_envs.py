from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_boiler, make_scaffold
from equitriage.agents.heuristics import heuristic_policy
from equitriage.envs import CityConfig, generate_city, run_episode
from equitriage.envs.base import ComplaintStream
from equitriage.envs.scaffold import hazard_multiplier
from equitriage.errors import ConfigurationError
from equitriage.rng import substream


def rule(env, kind):
    return heuristic_policy(kind, env.actions, env.obs_dim, env.feature_names, env.kind)


def test_defect_frequency_matches_base_rate():
    tracts = generate_city(CityConfig(seed=3))
    stream = ComplaintStream(tracts, 0.08, None, 168, substream(3, "test-stream"))
    defects = sum(stream.draw(step)[3] for step in range(100_000))
    assert abs(defects / 100_000 - 0.08) <= 0.005


def test_per_stratum_complaint_counts_within_three_sigma():
    env = make_boiler(seed=1, horizon=4000)
    log = run_episode(env, rule(env, "always_defer"), seed=0)
    p = np.array([t.true_incident_rate * t.reporting_propensity for t in env.tracts])
    p /= p.sum()
    n = len(log.complaints)
    for g in env.strata:
        mask = np.array([t.stratum == g for t in env.tracts])
        expected = n * p[mask].sum()
        sd = np.sqrt(n * p[mask].sum() * (1 - p[mask].sum()))
        observed = sum(1 for _, tid, _ in log.complaints if env.stratum_of(tid) == g)
        assert abs(observed - expected) <= 3 * sd


@pytest.mark.parametrize("make", [make_boiler, make_scaffold])
@pytest.mark.parametrize("kind", ["random", "always_escalate", "always_defer", "balanced"])
def test_conservation_and_mnar_records(make, kind):
    env = make(seed=2, horizon=300)
    log = run_episode(env, rule(env, kind), seed=4)
    s = log.summary
    assert s["created"] == s["resolved"] + s["dropped"] + s["open"]
    escalations = sum(tr.info["escalated"] for tr in log.transitions)
    assert s["records"] == escalations
    assert all(tr.info["recorded"] == tr.info["escalated"] for tr in log.transitions)


def test_always_inspect_has_full_recall():
    env = make_boiler(seed=0, horizon=500)
    s = run_episode(env, rule(env, "always_escalate"), seed=0).summary
    assert s["recall"] == 1.0 and s["fn"] == 0


def test_always_defer_has_zero_recall_and_cost():
    env = make_boiler(seed=0, horizon=500)
    s = run_episode(env, rule(env, "always_defer"), seed=0).summary
    assert s["recall"] == 0.0
    assert s["total_cost"] == 0.0
    assert s["records"] == 0


@pytest.mark.parametrize("make", [make_boiler, make_scaffold])
def test_episodes_are_deterministic(make):
    a = run_episode(make(seed=5, horizon=150), rule(make(seed=5, horizon=1), "random"), seed=9)
    b = run_episode(make(seed=5, horizon=150), rule(make(seed=5, horizon=1), "random"), seed=9)
    assert a.trajectory_csv() == b.trajectory_csv()
    assert a.complaints_csv() == b.complaints_csv()


def test_different_episode_seeds_differ():
    env = make_boiler(seed=5, horizon=150)
    p = rule(env, "balanced")
    assert run_episode(env, p, seed=1).complaints_csv() != run_episode(env, p, seed=2).complaints_csv()


def test_step_after_terminal_rejected():
    env = make_boiler(horizon=1)
    env.reset(0)
    assert env.step("Defer").terminal
    with pytest.raises(ConfigurationError):
        env.step("Defer")


def test_unknown_action_rejected(boiler):
    boiler.reset(0)
    with pytest.raises(ConfigurationError):
        boiler.step("Teleport")
    with pytest.raises(ConfigurationError):
        boiler.step(7)


def test_policy_shape_mismatch_rejected(boiler, scaffold):
    with pytest.raises(ConfigurationError):
        run_episode(boiler, rule(scaffold, "balanced"))


def test_scaffold_ignore_charges_miss_at_end():
    env = make_scaffold(seed=0, horizon=400)
    log = run_episode(env, _ignore_all(env), seed=0)
    s = log.summary
    assert s["tp"] == 0
    assert s["dropped"] == 400
    defects = sum(env.defect_at(item) for item in env.ignored)
    assert s["fn"] == defects
    missed = [o for tr in log.transitions for o in tr.info["outcomes"] if o[2]]
    assert len(missed) == defects
    assert all(tr.terminal for tr in log.transitions if any(o[2] for o in tr.info["outcomes"]))


def _ignore_all(env):
    from equitriage.agents.policy import Policy
    return Policy("heuristic", env.actions, env.obs_dim,
                  {"rule": "always_defer", "action": env.actions.index("ignore")})


def test_scaffold_batch_keeps_head_and_ages_it():
    env = make_scaffold(seed=0, horizon=50)
    env.reset(0)
    head = env.queue[0].event.event_id
    env.step("batch")
    assert env.queue[0].event.event_id == head
    assert env.queue[0].age == 1
    assert len(env.queue) == 2


def test_scaffold_delay_moves_head_to_tail():
    env = make_scaffold(seed=0, horizon=50)
    env.reset(0)
    env.step("delay")
    head = env.queue[0].event.event_id
    env.step("delay")
    assert env.queue[-2].event.event_id == head
    assert env.queue[-2].age == 2


@given(st.integers(0, 200), st.floats(0, 1), st.floats(1, 5))
def test_hazard_is_capped_and_non_decreasing(age, slope, cap):
    h = hazard_multiplier(age, slope, cap)
    assert 1.0 <= h <= cap
    assert hazard_multiplier(age + 1, slope, cap) >= h


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_city_strata_nonempty_and_deterministic(seed):
    cfg = CityConfig(seed=seed)
    a, b = generate_city(cfg), generate_city(cfg)
    assert a == b
    assert {t.stratum for t in a} >= {"low", "high"}
    rates = sum(t.true_incident_rate * t.reporting_propensity for t in a)
    assert rates == pytest.approx(1.0)


def test_burn_in_denominators_cover_every_stratum(boiler):
    assert set(boiler.denominators.N_hat) >= set(boiler.strata)
    assert all(v > 0 for v in boiler.denominators.N_hat.values())


def test_exploration_bonus_only_for_unvisited_tracts():
    env = make_boiler(seed=0, horizon=300, exploration_bonus=0.5)
    log = run_episode(env, rule(env, "always_escalate"), seed=0)
    last: dict[str, int] = {}
    for tr in log.transitions:
        tid, step = tr.info["tract_id"], tr.info["step"]
        fresh = tid not in last or step - last[tid] >= env.calibration.window_width
        assert tr.info["bonus"] == (0.5 if fresh else 0.0)
        last[tid] = step


def test_negative_bonus_rejected():
    with pytest.raises(ConfigurationError):
        make_boiler(exploration_bonus=-1.0)
