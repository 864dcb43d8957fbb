"""Command-line entry point: ``equitriage <subcommand> CONFIG [--set key=value ...]``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from equitriage.agents.heuristics import heuristic_policy
from equitriage.agents.training import train_policy
from equitriage.audit import (AttributionResult, audit_data_from_logs, audit_data_to_csv, compute_audit,
                              exact_shapley, flag_equity_sensitive, median_background,
                              permutation_importance, sampled_shapley, MAX_EXACT_FEATURES)
from equitriage.calibration import run_calibration_cycle
from equitriage.config import ExperimentConfig
from equitriage.correction import write_corrected_counts
from equitriage.envs.base import run_episode, window_table
from equitriage.errors import ConfigurationError, EquitriageError
from equitriage.experiments import (GridCell, alpha_equity_cell, coverage_csv, feedback_loop_sim,
                                    frontier_csv, pareto_frontier, price_of_equity, sweep_table_csv,
                                    weight_grid_sweep)
from equitriage.io import ArtifactWriter, dumps, load_policy
from equitriage.reward import RewardTables
from equitriage.rng import substream

SUBCOMMANDS = ("simulate", "train", "evaluate", "calibrate", "audit", "sweep", "feedback")
EVAL_FIELDS = ("seed", "eval_seed", "throughput", "precision", "recall", "total_cost", "equity_gap", "return")


def _policy_for(cfg: ExperimentConfig, env, args):
    if getattr(args, "policy", None):
        return load_policy(args.policy, env)
    return heuristic_policy("balanced", env.actions, env.obs_dim, env.feature_names, env.kind)


def _seed(cfg: ExperimentConfig, args) -> int:
    return cfg.seeds[0] if args.seed is None else args.seed


def cmd_simulate(cfg, args, out: ArtifactWriter) -> dict:
    env = cfg.make_env()
    policy = _policy_for(cfg, env, args)
    log = run_episode(env, policy, _seed(cfg, args))
    out.table("trajectory.csv", log.trajectory_csv())
    out.table("complaints.csv", log.complaints_csv())
    out.json("summary.json", {"policy": policy.kind, "seed": _seed(cfg, args), "summary": log.summary})
    return {"steps": log.summary["steps"], "throughput": log.summary["throughput"]}


def cmd_train(cfg, args, out: ArtifactWriter) -> dict:
    seed = _seed(cfg, args)
    env = cfg.make_env()
    trace: dict = {}
    policy = train_policy(cfg.agent_kind, env, cfg.agent_hyper, seed, trace)
    out.policy("policy.json", policy, env.signature())
    trace_doc = {k: v for k, v in trace.items() if k != "target"}
    out.json("training_trace.json", {"agent": cfg.agent_kind, "seed": seed, "trace": trace_doc})
    return {"agent": cfg.agent_kind, "seed": seed}


def _mean_sd(values) -> str:
    arr = np.array([np.nan if v is None else v for v in values], dtype=float)
    sd = float(np.nanstd(arr, ddof=1)) if np.sum(np.isfinite(arr)) > 1 else 0.0
    return f"{float(np.nanmean(arr)):.6g}±{sd:.6g}"


def cmd_evaluate(cfg, args, out: ArtifactWriter) -> dict:
    """One summary row per frozen seed plus a mean±sd line."""
    evaluation = cfg.raw["evaluation"]
    env = cfg.make_env(horizon=evaluation["horizon"])
    policy = _policy_for(cfg, env, args)
    if policy.mode == "stochastic":
        policy = policy.with_mode("greedy")
    rows = []
    for seed in cfg.seeds:
        eval_seed = int(evaluation["seed_base"]) + seed
        logs = [run_episode(env, policy, eval_seed + 100_000 * k) for k in range(int(evaluation["episodes"]))]
        s = [log.summary for log in logs]
        rows.append({
            "seed": seed, "eval_seed": eval_seed,
            "throughput": float(np.sum([x["throughput"] for x in s])),
            "precision": s[0]["precision"] if len(s) == 1 else float(np.mean([x["precision"] or 0 for x in s])),
            "recall": s[0]["recall"] if len(s) == 1 else float(np.mean([x["recall"] or 0 for x in s])),
            "total_cost": float(np.sum([x["total_cost"] for x in s])),
            "equity_gap": float(np.mean([x["equity_gap"] for x in s])),
            "return": float(np.sum([x["return"] for x in s])),
        })
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_FIELDS)
    for r in rows:
        w.writerow([r[k] if k in ("seed", "eval_seed") else repr(r[k]) for k in EVAL_FIELDS])
    w.writerow(["mean±sd", ""] + [_mean_sd([r[k] for r in rows]) for k in EVAL_FIELDS[2:]])
    out.table("evaluation.csv", buf.getvalue())
    out.json("evaluation.json", {"policy": policy.kind, "rows": rows,
                                 "mean_sd": {k: _mean_sd([r[k] for r in rows]) for k in EVAL_FIELDS[2:]}})
    return {"seeds": len(rows)}


def cmd_calibrate(cfg, args, out: ArtifactWriter) -> dict:
    """Run one calibration cycle over a deployment window of the current policy."""
    seed = _seed(cfg, args)
    env = cfg.make_env()
    # the history window spans the burn-in length so duplicate counts reach m_min
    env.horizon = max(env.horizon, env.burn_in_steps)
    policy = _policy_for(cfg, env, args)
    log = run_episode(env, policy, seed)
    correct: dict[str, int] = {}
    for tr in log.transitions:
        if tr.info.get("escalated") and tr.info.get("defect"):
            correct[tr.info["tract_id"]] = correct.get(tr.info["tract_id"], 0) + 1
    rows = window_table(env.tracts, log.complaints, correct)
    scale = cfg.calibration.window_width / len(log.transitions)

    def retrain(counts):
        if args.no_retrain:
            candidate = policy
        else:
            candidate = train_policy(cfg.agent_kind, env, cfg.agent_hyper, seed)
            out.policy("policy.json", candidate, env.signature())
        if getattr(candidate, "mode", "greedy") == "stochastic":
            candidate = candidate.with_mode("greedy")
        after = run_episode(env, candidate, seed + 1)
        return after.summary["rates"]

    report = run_calibration_cycle(
        rows, cfg.calibration, retrain, env.strata,
        on_denominators=[lambda counts: env.set_denominators(counts.scaled(scale))],
        equity_variant=cfg.weights.equity_variant, rng=substream(seed, "bootstrap"),
        window=(0, len(log.transitions)))
    out.json("calibration_report.json", report.to_dict())
    out.table("corrected_counts.csv", write_corrected_counts(
        report.corrected, report.estimates, {t.tract_id: t.stratum for t in env.tracts}))
    return {"passed": report.audit.passed, "gap": report.audit.gap}


def _auc(y, scores) -> float:
    from scipy.stats import rankdata

    y = np.asarray(y, dtype=bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = rankdata(scores)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def cmd_audit(cfg, args, out: ArtifactWriter) -> dict:
    seed = _seed(cfg, args)
    evaluation = cfg.raw["evaluation"]
    settings = cfg.raw["audit"]
    env = cfg.make_env(horizon=evaluation["horizon"])
    policy = _policy_for(cfg, env, args)
    if policy.mode == "stochastic":
        policy = policy.with_mode("greedy")
    logs = [run_episode(env, policy, int(evaluation["seed_base"]) + seed + 100_000 * k)
            for k in range(int(evaluation["episodes"]))]
    data = audit_data_from_logs(logs)
    report = compute_audit(data, env.strata, env.denominators.N_hat, cfg.calibration.window_width)
    X = np.array([tr.observation for log in logs for tr in log.transitions])
    y = np.array([bool(tr.info.get("defect")) for log in logs for tr in log.transitions])
    background = median_background(X)
    rng = substream(seed, "audit")
    pick = rng.choice(len(X), size=min(int(settings["instances"]), len(X)), replace=False)
    names = env.feature_names
    per_instance = []
    for i in sorted(pick):
        if len(names) <= MAX_EXACT_FEATURES:
            per_instance.append(exact_shapley(policy.escalation_score, X[i], background, names))
        else:
            per_instance.append(sampled_shapley(policy.escalation_score, X[i], background,
                                                int(settings["sampled_permutations"]), rng, names))
    mean_abs = np.mean([np.abs(a.values) for a in per_instance], axis=0)
    summary = AttributionResult(tuple(names), mean_abs, per_instance[0].baseline, "mean_abs_shapley")
    perm = permutation_importance(policy.escalation_score, X, y, _auc, int(settings["n_repeats"]), rng, names)
    report.flags = flag_equity_sensitive(summary, sorted(env.equity_sensitive), int(settings["top_k"]))
    report.attributions = {"shapley": summary.as_dict(), "permutation": perm.as_dict(),
                           "instances": [int(i) for i in sorted(pick)]}
    out.json("audit_report.json", report.to_dict())
    out.table("audit_data.csv", audit_data_to_csv(data))
    return {"max_gap": report.max_gap, "flags": report.flags}


def sweep_cells(cfg, values=None) -> list[GridCell]:
    """Grid cells along the configured sweep axis; ``values`` overrides the configured levels."""
    sweep = cfg.raw["sweep"]
    values = sweep["values"] if values is None else values
    if sweep["axis"] == "alpha_equity":
        return [alpha_equity_cell(float(v), sweep["base"], cfg.weights.equity_variant) for v in values]
    return [GridCell(cfg.weights, {"w_miss": float(v)}, f"w_miss={float(v):g}") for v in values]


def sweep_env_factory(cfg):
    """``make_env(cell, purpose, seed)``: training uses the env horizon, evaluation the evaluation horizon."""
    evaluation = cfg.raw["evaluation"]

    def make_env(cell: GridCell, purpose: str, seed: int):
        tables = RewardTables(**{**cfg.tables.__dict__, **cell.overrides}) if cell.overrides else cfg.tables
        horizon = evaluation["horizon"] if purpose == "eval" else None
        return cfg.make_env(seed=seed, weights=cell.weights, tables=tables, horizon=horizon)

    return make_env


def cmd_sweep(cfg, args, out: ArtifactWriter) -> dict:
    evaluation = cfg.raw["evaluation"]
    make_env = sweep_env_factory(cfg)
    progress = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    points = weight_grid_sweep(sweep_cells(cfg), make_env, cfg.agent_kind, cfg.agent_hyper, cfg.seeds,
                               int(cfg.raw["sweep"]["eval_episodes"]), int(evaluation["seed_base"]), progress)
    pareto_frontier(points)
    out.table("sweep.csv", sweep_table_csv(points))
    out.table("frontier.csv", frontier_csv(points))
    doc = {"axis": cfg.raw["sweep"]["axis"],
           "points": [{"label": p.label, "metrics": p.metrics, "dominated": p.dominated, "tie": p.tie,
                       "failed": p.failed, "error": p.error} for p in points]}
    if cfg.raw["sweep"]["axis"] == "alpha_equity":
        doc["price_of_equity"] = price_of_equity(points, cfg.calibration.audit_tau)
    out.json("sweep_summary.json", doc)
    return {"points": len(points), "frontier": sum(not p.dominated and not p.failed for p in points)}


def cmd_feedback(cfg, args, out: ArtifactWriter) -> dict:
    results = []
    for mitigation in cfg.raw["feedback"]["mitigations"]:
        for seed in cfg.seeds:
            env = cfg.make_env(seed=seed)
            results.append(feedback_loop_sim(cfg.feedback_config(mitigation), env,
                                             cfg.raw["feedback"]["agent"], seed))
    out.table("coverage.csv", coverage_csv(results))
    out.json("feedback.json", {"runs": results})
    return {"runs": len(results)}


HANDLERS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
            "calibrate": cmd_calibrate, "audit": cmd_audit, "sweep": cmd_sweep, "feedback": cmd_feedback}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="equitriage", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__doc__)
        p.add_argument("config", help="YAML experiment config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. --set agent.hyper.total_steps=5000")
        p.add_argument("--out", help="output directory (default: config output_dir/<subcommand>)")
        p.add_argument("--seed", type=int, help="seed (default: first configured seed)")
        p.add_argument("--verbose", action="store_true")
        if name in ("simulate", "evaluate", "calibrate", "audit"):
            p.add_argument("--policy", help="policy JSON (default: the balanced heuristic)")
        if name == "calibrate":
            p.add_argument("--no-retrain", action="store_true", help="audit the given policy without retraining")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, args.overrides)
        root = Path(args.out) if args.out else cfg.output_dir / args.command
        out = ArtifactWriter(root, cfg.fingerprint())
        out.json("config.json", {"config": cfg.to_dict()})
        result = HANDLERS[args.command](cfg, args, out)
    except EquitriageError as exc:
        sys.stderr.write(dumps(exc.to_record()))
        return 2 if isinstance(exc, ConfigurationError) else 1
    except (OSError, ValueError) as exc:
        sys.stderr.write(dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 1
    print(json.dumps({"command": args.command, "output": str(root), "fingerprint": cfg.fingerprint(),
                      "files": out.written, **result}, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
