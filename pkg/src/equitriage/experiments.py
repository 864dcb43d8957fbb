"""Weight sweeps, Pareto filtering, price of equity and the closed-loop feedback simulation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from equitriage.agents.heuristics import heuristic_policy
from equitriage.agents.training import train_policy
from equitriage.audit import audit_data_from_logs, compute_audit
from equitriage.calibration import DeploymentSlot, audit_gate
from equitriage.domain import RewardWeights, validate_weights
from equitriage.envs.base import run_episode
from equitriage.envs.toy import ToyStep
from equitriage.errors import ConfigurationError, EquitriageError
from equitriage.rng import child_seed, substream

# metric name -> +1 to maximise, -1 to minimise
DEFAULT_OBJECTIVES = {"throughput": 1, "total_cost": -1, "equity_gap": -1, "detection_rate": 1}


@dataclass(frozen=True)
class GridCell:
    weights: RewardWeights
    overrides: Mapping = field(default_factory=dict)
    label: str = ""


@dataclass
class ParetoPoint:
    weights: RewardWeights
    metrics: dict[str, float]
    per_seed: list[dict]
    label: str = ""
    overrides: dict = field(default_factory=dict)
    dominated: bool = False
    tie: bool = False
    failed: bool = False
    error: str = ""


def alpha_equity_cell(alpha_equity: float, base: Sequence[float] = (1.0, 1.0, 1.0),
                      variant: str = "corrected", overrides: Mapping | None = None) -> GridCell:
    """Weights with equity share ``alpha_equity`` and the rest split in the ratio ``base``."""
    base = np.asarray(base, dtype=float)
    rest = (1.0 - alpha_equity) * base / base.sum()
    w = validate_weights(RewardWeights(rest[0], rest[1], alpha_equity, rest[2], variant))
    return GridCell(w, dict(overrides or {}), f"alpha_equity={alpha_equity:g}")


def _vector(point: ParetoPoint, objectives: Mapping[str, int]) -> np.ndarray:
    return np.array([sign * point.metrics[name] for name, sign in objectives.items()], dtype=float)


def dominates(a: ParetoPoint, b: ParetoPoint, objectives: Mapping[str, int] = DEFAULT_OBJECTIVES) -> bool:
    va, vb = _vector(a, objectives), _vector(b, objectives)
    return bool(np.all(va >= vb) and np.any(va > vb))


def pareto_frontier(points: Sequence[ParetoPoint],
                    objectives: Mapping[str, int] = DEFAULT_OBJECTIVES) -> list[ParetoPoint]:
    """Non-dominated points in input order; identical metric vectors are kept and flagged as ties.

    Sets ``dominated`` and ``tie`` on every input point.
    """
    if not points:
        raise ConfigurationError("pareto_frontier needs at least one point")
    live = [p for p in points if not p.failed]
    vectors = [_vector(p, objectives) for p in live]
    frontier = []
    for i, p in enumerate(live):
        p.dominated = any(
            np.all(vectors[j] >= vectors[i]) and np.any(vectors[j] > vectors[i]) for j in range(len(live)) if j != i)
        p.tie = any(np.array_equal(vectors[j], vectors[i]) for j in range(len(live)) if j != i)
        if not p.dominated:
            frontier.append(p)
    return frontier


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation; 0 when either input is constant."""
    from scipy.stats import spearmanr

    if np.ptp(np.asarray(x, dtype=float)) == 0 or np.ptp(np.asarray(y, dtype=float)) == 0:
        return 0.0
    rho = spearmanr(x, y).statistic
    return float(rho) if np.isfinite(rho) else 0.0


# --- sweeps --------------------------------------------------------------------

EnvFactory = Callable[[GridCell, str, int], object]


def evaluate_policy(env, policy, episodes: int, seed_base: int = 10_000) -> dict:
    """Greedy evaluation over fixed evaluation seeds; metrics pooled across episodes."""
    logs = [run_episode(env, policy, seed_base + k) for k in range(episodes)]
    report = compute_audit(audit_data_from_logs(logs), env.strata, env.denominators.N_hat,
                           env.calibration.window_width)
    return {
        "throughput": float(report.overall.throughput),
        "total_cost": float(sum(log.summary["total_cost"] for log in logs)),
        "equity_gap": float(report.max_gap),
        "detection_rate": float(report.overall.recall or 0.0),
        "precision": float(report.overall.precision or 0.0),
        "rates": {g: r for g, r in report.rates.items()},
    }


def weight_grid_sweep(cells: Sequence[GridCell], make_env: EnvFactory, agent_kind: str,
                      agent_hyper: dict | None, seeds: Sequence[int], eval_episodes: int = 3,
                      eval_seed_base: int = 10_000, progress: Callable[[str], None] | None = None) -> list[ParetoPoint]:
    """Train and evaluate ``agent_kind`` for every grid cell and seed.

    ``make_env(cell, purpose, seed)`` builds the training (``purpose="train"``)
    or evaluation environment. A cell whose training aborts is marked failed
    and the sweep continues.
    """
    if not cells:
        raise ConfigurationError("empty grid")
    if len(seeds) < 3:
        raise ConfigurationError("a sweep needs at least 3 seeds")
    points = []
    for cell in cells:
        per_seed = []
        try:
            for seed in seeds:
                policy = train_policy(agent_kind, make_env(cell, "train", seed), agent_hyper, seed)
                metrics = evaluate_policy(make_env(cell, "eval", seed), policy, eval_episodes, eval_seed_base)
                metrics["seed"] = seed
                per_seed.append(metrics)
                if progress:
                    progress(f"{cell.label} seed={seed} gap={metrics['equity_gap']:.4f} "
                             f"throughput={metrics['throughput']:.0f}")
        except EquitriageError as exc:
            points.append(ParetoPoint(cell.weights, {}, per_seed, cell.label, dict(cell.overrides),
                                      failed=True, error=f"{exc.code}: {exc}"))
            continue
        means = {k: float(np.mean([m[k] for m in per_seed])) for k in DEFAULT_OBJECTIVES}
        points.append(ParetoPoint(cell.weights, means, per_seed, cell.label, dict(cell.overrides)))
    return points


SWEEP_FIELDS = ("label", "alpha_speed", "alpha_cost", "alpha_equity", "alpha_retention", "seed",
                "throughput", "total_cost", "equity_gap", "detection_rate", "failed")


def sweep_table_csv(points: Sequence[ParetoPoint]) -> str:
    """Long format: one row per configuration and seed."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for p in points:
        rows = p.per_seed or [{}]
        for m in rows:
            w.writerow([p.label, *(repr(v) for v in p.weights.as_tuple()), m.get("seed", ""),
                        *(repr(m[k]) if k in m else "" for k in DEFAULT_OBJECTIVES), int(p.failed)])
    return out.getvalue()


def frontier_csv(points: Sequence[ParetoPoint]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["label", *DEFAULT_OBJECTIVES, "dominated", "tie", "failed"])
    for p in points:
        w.writerow([p.label, *(repr(p.metrics.get(k, float("nan"))) for k in DEFAULT_OBJECTIVES),
                    int(p.dominated), int(p.tie), int(p.failed)])
    return out.getvalue()


def price_of_equity(points: Sequence[ParetoPoint], tau: float = 0.05) -> dict:
    """Relative throughput lost at the smallest equity weight whose mean gap is within ``tau``."""
    live = [p for p in points if not p.failed]
    base = [p for p in live if p.weights.alpha_equity == 0]
    if not base:
        raise ConfigurationError("price of equity needs a configuration with alpha_equity = 0")
    base = base[0]
    reaching = sorted((p for p in live if p.metrics["equity_gap"] <= tau),
                      key=lambda p: p.weights.alpha_equity)
    report = {"tau": tau, "baseline_alpha_equity": 0.0, "baseline_gap": base.metrics["equity_gap"],
              "baseline_throughput": base.metrics["throughput"]}
    if not reaching:
        report.update(status="parity unattained", penalty=None)
        return report
    best = reaching[0]
    per_seed = []
    for b, m in zip(base.per_seed, best.per_seed):
        per_seed.append(1.0 - m["throughput"] / b["throughput"] if b["throughput"] > 0 else None)
    valid = [v for v in per_seed if v is not None]
    penalty = 1.0 - best.metrics["throughput"] / base.metrics["throughput"] if base.metrics["throughput"] > 0 else None
    report.update(
        status="parity attained",
        alpha_equity=best.weights.alpha_equity,
        gap=best.metrics["equity_gap"],
        throughput=best.metrics["throughput"],
        penalty=penalty,
        per_seed_penalty=per_seed,
        penalty_interval=[float(min(valid)), float(max(valid))] if valid else None,
        penalty_sd=float(np.std(valid, ddof=1)) if len(valid) > 1 else 0.0,
    )
    return report


# --- feedback loop -----------------------------------------------------------------

MITIGATIONS = ("none", "exploration_bonus", "counterfactual_sample", "audit_checkpoint")


@dataclass(frozen=True)
class FeedbackLoopConfig:
    n_rounds: int = 6
    mitigation: str = "none"
    bonus: float = 0.5
    counterfactual_fraction: float = 0.1
    audit_tau: float = 0.05
    deploy_steps: int = 3000
    train_passes: int = 10
    risk_prior_weight: float = 5.0
    agent_hyper: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.n_rounds < 2:
            raise ConfigurationError("n_rounds must be >= 2")
        if self.mitigation not in MITIGATIONS:
            raise ConfigurationError(f"unknown mitigation {self.mitigation!r}; expected one of {MITIGATIONS}")
        if not 0.0 <= self.counterfactual_fraction <= 1.0:
            raise ConfigurationError("counterfactual_fraction must be in [0, 1]")
        if self.bonus < 0:
            raise ConfigurationError("bonus must be >= 0")
        if self.deploy_steps < 1 or self.train_passes < 1:
            raise ConfigurationError("deploy_steps and train_passes must be positive")


@dataclass(frozen=True)
class LoggedDecision:
    observation: np.ndarray
    tract_id: str
    escalated: bool
    # None when the complaint was never escalated (no outcome record exists)
    recorded_defect: bool | None
    step: int


class RecordReplayEnv:
    """Retraining view of a deployment log under missing-not-at-random outcomes.

    The learner revisits each logged complaint in order. Only escalated
    complaints carry an outcome record: escalating a recorded defect earns the
    speed and retention credit, deferring it costs the missed-defect penalty,
    and every complaint without a record is treated as defect-free.
    """

    def __init__(self, base_env, decisions: Sequence[LoggedDecision], exploration_bonus: float = 0.0):
        if not decisions:
            raise ConfigurationError("cannot replay an empty log")
        self.base = base_env
        self.kind = base_env.kind
        self.actions = base_env.actions
        self.feature_names = base_env.feature_names
        self.binary_features = base_env.binary_features
        self.obs_dim = base_env.obs_dim
        self.n_actions = base_env.n_actions
        self.decisions = list(decisions)
        self.horizon = len(self.decisions)
        self.exploration_bonus = exploration_bonus
        self.window = base_env.calibration.window_width
        self.weights = validate_weights(base_env.weights)

    def signature(self) -> dict:
        return self.base.signature()

    def reset(self, seed: int = 0) -> np.ndarray:
        self.i = 0
        self.last_escalation: dict[str, int] = {}
        return self.decisions[0].observation

    def step(self, action) -> ToyStep:
        label = self.base._label(action)
        d = self.decisions[self.i]
        escalated = self.actions.is_escalating(label)
        defect = bool(d.recorded_defect)
        w = self.weights
        t = self.base.tables
        speed = t.correct_escalation if escalated and defect else (-t.w_miss if defect else 0.0)
        retention = t.retention_per_resolved if escalated and defect else 0.0
        cost = t.cost_of(label, self.actions)
        reward = w.alpha_speed * speed - w.alpha_cost * cost + w.alpha_retention * retention
        if escalated:
            last = self.last_escalation.get(d.tract_id)
            if self.exploration_bonus and (last is None or last <= d.step - self.window):
                reward += self.exploration_bonus
            self.last_escalation[d.tract_id] = d.step
        self.i += 1
        done = self.i >= len(self.decisions)
        nxt = np.zeros(self.obs_dim) if done else self.decisions[self.i].observation
        return ToyStep(d.observation, label, reward, nxt, done)


class CounterfactualPolicy:
    """Escalates a random share of the complaints the wrapped policy defers."""

    def __init__(self, policy, fraction: float, rng: np.random.Generator):
        self.policy = policy
        self.fraction = fraction
        self.rng = rng
        self.obs_dim = policy.obs_dim
        self.n_actions = policy.n_actions
        self.escalate = policy.actions.escalating_indices[0]

    def act(self, obs, rng=None) -> int:
        a = self.policy.act(obs, rng)
        draw = self.rng.random()
        if not self.policy.actions.is_escalating(a) and draw < self.fraction:
            return self.escalate
        return a


def _decisions(log, risk_index: int, risk: Mapping[str, float]) -> list[LoggedDecision]:
    out = []
    for tr in log.transitions:
        obs = np.array(tr.observation, dtype=float)
        obs[risk_index] = risk[tr.info["tract_id"]]
        escalated = bool(tr.info["escalated"])
        out.append(LoggedDecision(obs, tr.info["tract_id"], escalated,
                                  bool(tr.info["defect"]) if escalated else None, tr.info["step"]))
    return out


def updated_risk(env, log, prior_weight: float) -> dict[str, float]:
    """Neighbourhood risk recomputed from outcome records only.

    Tracts with few escalations have few records and drift towards low risk,
    which is the mechanism by which the loop narrows coverage.
    """
    complaints = {t.tract_id: 0 for t in env.tracts}
    defects = {t.tract_id: 0 for t in env.tracts}
    for tr in log.transitions:
        complaints[tr.info["tract_id"]] += 1
    for rec in log.records:
        defects[rec.tract_id] += int(rec.defect)
    total_c = sum(complaints.values())
    mean_rate = sum(defects.values()) / total_c if total_c else 0.0
    if mean_rate <= 0:
        return {t: 0.0 for t in complaints}
    out = {}
    for t in complaints:
        smoothed = (defects[t] + prior_weight * mean_rate) / (complaints[t] + prior_weight)
        out[t] = float(np.clip(0.5 * smoothed / mean_rate, 0.0, 1.0))
    return out


def coverage(env, log) -> dict[str, float | None]:
    """Escalations per estimated incident, per stratum, over one deployment."""
    scale = len(log.transitions) / env.calibration.window_width
    esc = {g: 0 for g in env.strata}
    for tr in log.transitions:
        g = tr.info.get("stratum")
        if g in esc and tr.info["escalated"]:
            esc[g] += 1
    return {g: (esc[g] / (env.denominators.N_hat[g] * scale) if env.denominators.N_hat.get(g, 0) > 0 else None)
            for g in env.strata}


def feedback_loop_sim(config: FeedbackLoopConfig, env, agent_kind: str = "tabular_q", seed: int = 0) -> dict:
    """Deploy, record outcomes for escalations only, retrain on the records, repeat.

    Round 0 deploys the balanced heuristic. Each later round recomputes the
    neighbourhood-risk feature from the records, retrains on a replay of the
    previous deployment, applies the mitigation and deploys again. Coverage
    per stratum is recorded for every round.
    """
    if env.kind != "boiler":
        raise ConfigurationError("the feedback simulation needs a one-decision-per-complaint environment")
    env.horizon = config.deploy_steps
    risk_index = env.feature_names.index("neighborhood_risk")
    incumbent = heuristic_policy("balanced", env.actions, env.obs_dim, env.feature_names, env.kind)
    slot = DeploymentSlot(incumbent)
    cf_rng = substream(seed, "feedback", "counterfactual")
    rounds = []
    env.set_risk({t.tract_id: t.neighborhood_risk for t in env.tracts})
    log = None
    for k in range(config.n_rounds):
        info = {"round": k, "suspended": False}
        if k > 0:
            risk = updated_risk(env, log, config.risk_prior_weight)
            env.set_risk(risk)
            decisions = _decisions(log, risk_index, risk)
            bonus = config.bonus if config.mitigation == "exploration_bonus" else 0.0
            hyper = dict(config.agent_hyper)
            hyper.setdefault("episodes", config.train_passes)
            candidate = train_policy(agent_kind, RecordReplayEnv(env, decisions, bonus), hyper,
                                     child_seed(seed, "feedback_train", k))
            if config.mitigation == "audit_checkpoint":
                preview = run_episode(env, candidate, child_seed(seed, "feedback_audit", k))
                gate = audit_gate(coverage(env, preview), config.audit_tau)
                if not slot.propose(candidate, gate):
                    info["suspended"] = True
                    info["gate_gap"] = gate.gap
                    retrained = train_policy(agent_kind, RecordReplayEnv(env, decisions, config.bonus), hyper,
                                             child_seed(seed, "feedback_retrain", k))
                    preview = run_episode(env, retrained, child_seed(seed, "feedback_audit", k))
                    slot.propose(retrained, audit_gate(coverage(env, preview), config.audit_tau))
            else:
                slot.propose(candidate, audit_gate({}, config.audit_tau))
        deployed = slot.deployed
        if config.mitigation == "counterfactual_sample" and k > 0:
            deployed = CounterfactualPolicy(deployed, config.counterfactual_fraction, cf_rng)
        log = run_episode(env, deployed, child_seed(seed, "feedback_deploy", k))
        info["coverage"] = coverage(env, log)
        info["escalations"] = sum(int(tr.info["escalated"]) for tr in log.transitions)
        info["records"] = len(log.records)
        info["deployed_kind"] = getattr(slot.deployed, "kind", "")
        rounds.append(info)
    return {"mitigation": config.mitigation, "seed": seed, "rounds": rounds,
            "suspended_candidates": len(slot.suspended)}


def coverage_csv(results: Sequence[dict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    strata = sorted({g for r in results for rd in r["rounds"] for g in rd["coverage"]})
    w.writerow(["mitigation", "seed", "round", "suspended", *(f"coverage_{g}" for g in strata)])
    for r in results:
        for rd in r["rounds"]:
            w.writerow([r["mitigation"], r["seed"], rd["round"], int(rd["suspended"]),
                        *(repr(rd["coverage"].get(g)) for g in strata)])
    return out.getvalue()
