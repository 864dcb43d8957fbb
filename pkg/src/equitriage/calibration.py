"""Per-cycle calibration: propensities, corrected denominators, retraining and the audit gate."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from equitriage.correction import (
    CalibrationConfig,
    CorrectedCounts,
    PropensityEstimate,
    ProxyModel,
    bootstrap_equity_interval,
    correct_counts,
    estimate_propensity_duplicates,
    fit_proxy,
    predict_propensity,
)
from equitriage.errors import CalibrationError, InsufficientDataError
from equitriage.reward import equity_term


@dataclass(frozen=True)
class TractWindow:
    """Counts for one tract over one calibration window."""

    tract_id: str
    C: int
    D: int
    covariates: tuple[float, float, float, float]
    stratum: str | None
    correct_escalations: int = 0


@dataclass(frozen=True)
class AuditResult:
    passed: bool
    gap: float
    rates: dict[str, float]
    tau: float

    @property
    def label(self) -> str:
        return "pass" if self.passed else f"fail({self.gap:.4g})"


@dataclass
class CalibrationCycleReport:
    cycle_index: int
    estimates: dict[str, PropensityEstimate]
    corrected: CorrectedCounts
    denominator_deltas: dict[str, float]
    audit: AuditResult
    raw_rates: dict[str, float]
    bootstrap_interval: tuple[float, float] | None
    proxy: ProxyModel | None
    suspended: bool = False
    window: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        return {
            "cycle_index": self.cycle_index,
            "window": list(self.window),
            "estimates": {t: {"rho_hat": e.rho_hat, "variance": e.variance, "source": e.source}
                          for t, e in sorted(self.estimates.items())},
            "I_hat": dict(sorted(self.corrected.I_hat.items())),
            "N_hat": dict(self.corrected.N_hat),
            "raw_N": dict(self.corrected.raw_N),
            "empty_strata": list(self.corrected.empty_strata),
            "denominator_deltas": dict(self.denominator_deltas),
            "audit": {"passed": self.audit.passed, "gap": self.audit.gap, "tau": self.audit.tau,
                      "rates": dict(self.audit.rates)},
            "raw_rates": dict(self.raw_rates),
            "bootstrap_interval": list(self.bootstrap_interval) if self.bootstrap_interval else None,
            "proxy": None if self.proxy is None else {
                "beta0": self.proxy.beta0, "beta": list(self.proxy.beta),
                "training_mse": self.proxy.training_mse},
            "suspended": self.suspended,
        }


def audit_gate(rates: Mapping[str, float | None], tau: float = 0.05) -> AuditResult:
    """Fail iff the largest pairwise gap between stratum rates exceeds ``tau``."""
    present = {g: float(r) for g, r in rates.items() if r is not None}
    if any(not np.isfinite(r) for r in present.values()):
        raise ValueError("audit rates must be finite")
    gap = max((abs(a - b) for a, b in itertools.combinations(present.values(), 2)), default=0.0)
    return AuditResult(passed=not gap > tau, gap=gap, rates=present, tau=tau)


def estimate_propensities(rows: Sequence[TractWindow], config: CalibrationConfig,
                          proxy: ProxyModel | None = None,
                          window_end_step: int = 0) -> tuple[dict[str, PropensityEstimate], ProxyModel | None]:
    """Duplicate-based estimates where a tract has at least ``m_min`` reports, proxy elsewhere."""
    estimates: dict[str, PropensityEstimate] = {}
    needs_proxy = []
    for row in rows:
        if row.C >= config.m_min and row.D < row.C:
            estimates[row.tract_id] = estimate_propensity_duplicates(
                row.C, row.D, row.tract_id, window_end_step)
        else:
            needs_proxy.append(row)
    if needs_proxy:
        if proxy is None:
            training = [(r.covariates, estimates[r.tract_id].rho_hat) for r in rows if r.tract_id in estimates]
            try:
                proxy = fit_proxy(training)
            except InsufficientDataError as exc:
                missing = ", ".join(r.tract_id for r in needs_proxy[:5])
                raise CalibrationError(
                    f"tracts without enough duplicate reports ({missing}...) and no proxy model: {exc}") from exc
        for row in needs_proxy:
            estimates[row.tract_id] = predict_propensity(proxy, row.covariates, config.rho_min,
                                                         row.tract_id, window_end_step)
    return estimates, proxy


def corrected_denominators(rows: Sequence[TractWindow], config: CalibrationConfig,
                           stratum_order: Iterable[str], proxy: ProxyModel | None = None,
                           window: tuple[int, int] = (0, 0)):
    """Steps one to three of the cycle: propensities, corrected counts, stratum totals."""
    estimates, proxy = estimate_propensities(rows, config, proxy, window[1])
    counts = correct_counts(
        {r.tract_id: r.C for r in rows},
        {t: e.rho_hat for t, e in estimates.items()},
        {r.tract_id: r.stratum for r in rows},
        config,
        stratum_order=stratum_order,
        window=window,
    )
    return estimates, counts, proxy


TrainingHook = Callable[[CorrectedCounts], Mapping[str, float | None]]


def run_calibration_cycle(rows: Sequence[TractWindow], config: CalibrationConfig,
                          training_hook: TrainingHook, stratum_order: Sequence[str],
                          proxy: ProxyModel | None = None, cycle_index: int = 0,
                          previous: Mapping[str, float] | None = None,
                          on_denominators: Sequence[Callable[[CorrectedCounts], None]] = (),
                          equity_variant: str = "corrected",
                          rng: np.random.Generator | None = None,
                          window: tuple[int, int] = (0, 0)) -> CalibrationCycleReport:
    """Run one calibration cycle over a frozen history window.

    ``training_hook`` receives the new corrected counts, retrains or fine-tunes
    the policy, and returns per-stratum escalation rates measured after
    retraining. Those rates feed the audit gate; a failing gate marks the
    cycle's policy as suspended.
    """
    if not rows:
        raise CalibrationError("empty history window")
    estimates, counts, proxy = corrected_denominators(rows, config, stratum_order, proxy, window)
    for sink in on_denominators:
        sink(counts)
    previous = previous or {}
    deltas = {g: counts.N_hat[g] - previous.get(g, 0.0) for g in counts.N_hat}

    rates = training_hook(counts)
    audit = audit_gate(rates, config.audit_tau)

    n = {g: 0.0 for g in stratum_order}
    for r in rows:
        if r.stratum in n:
            n[r.stratum] += r.correct_escalations
    raw_rates = {g: (n[g] / counts.raw_N[g] if counts.raw_N.get(g, 0) > 0 else None) for g in stratum_order}
    interval = None
    if any(v > 0 for v in counts.N_hat.values()):
        interval = bootstrap_equity_interval(
            {r.tract_id: r.C for r in rows}, estimates, {r.tract_id: r.stratum for r in rows}, n,
            lambda nn, NN: equity_term(equity_variant, nn, NN, counts.raw_N)[0],
            config, rng if rng is not None else np.random.default_rng(cycle_index),
            stratum_order=list(stratum_order),
        )
    return CalibrationCycleReport(
        cycle_index=cycle_index,
        estimates=estimates,
        corrected=counts,
        denominator_deltas=deltas,
        audit=audit,
        raw_rates={g: v for g, v in raw_rates.items() if v is not None},
        bootstrap_interval=interval,
        proxy=proxy,
        suspended=not audit.passed,
        window=window,
    )


@dataclass
class DeploymentSlot:
    """Holds the policy currently allowed to act.

    A candidate that fails the audit gate is recorded as suspended and the
    incumbent keeps the slot; a passing candidate replaces it.
    """

    deployed: object
    history: list = field(default_factory=list)

    def propose(self, candidate, audit: AuditResult) -> bool:
        self.history.append((candidate, audit))
        if audit.passed:
            self.deployed = candidate
        return audit.passed

    @property
    def suspended(self) -> list:
        return [c for c, a in self.history if not a.passed]
