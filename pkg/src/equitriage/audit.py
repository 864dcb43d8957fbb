"""Demographic audit metrics and feature attribution for learned triage policies."""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from equitriage.errors import ConfigurationError, InsufficientDataError, ValidationError

# --- confusion metrics -------------------------------------------------------


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def recall(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def throughput(self) -> int:
        """Correct escalations, i.e. confirmed defects routed to inspection."""
        return self.tp

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "recall": self.recall, "precision": self.precision, "throughput": self.throughput}


# --- audit ----------------------------------------------------------------------


@dataclass(frozen=True)
class OutcomeRow:
    """One final disposition: escalated (TP/FP) or not escalated (FN if ``missed``, else TN)."""

    stratum: str | None
    escalated: bool
    defect: bool
    missed: bool


@dataclass
class AuditData:
    outcomes: list[OutcomeRow]
    complaints: dict[str, int]
    steps: int


def audit_data_from_logs(logs) -> AuditData:
    if not logs:
        raise InsufficientDataError("audit needs at least one episode log")
    outcomes: list[OutcomeRow] = []
    complaints: dict[str, int] = {}
    steps = 0
    for log in logs:
        steps += len(log.transitions)
        for tr in log.transitions:
            info = tr.info
            if info.get("new_complaint") and info.get("stratum") is not None:
                complaints[info["stratum"]] = complaints.get(info["stratum"], 0) + 1
            for escalated, defect, missed, stratum in info["outcomes"]:
                outcomes.append(OutcomeRow(stratum, bool(escalated), bool(defect), bool(missed)))
    return AuditData(outcomes, complaints, steps)


def audit_data_to_csv(data: AuditData) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["kind", "stratum", "escalated", "defect", "missed", "count"])
    w.writerow(["steps", "", "", "", "", data.steps])
    for g in sorted(data.complaints):
        w.writerow(["complaints", g, "", "", "", data.complaints[g]])
    for row in data.outcomes:
        w.writerow(["outcome", row.stratum or "", int(row.escalated), int(row.defect), int(row.missed), 1])
    return out.getvalue()


def audit_data_from_csv(text: str) -> AuditData:
    outcomes, complaints, steps = [], {}, 0
    for rec in csv.DictReader(io.StringIO(text)):
        if rec["kind"] == "steps":
            steps = int(rec["count"])
        elif rec["kind"] == "complaints":
            complaints[rec["stratum"]] = int(rec["count"])
        elif rec["kind"] == "outcome":
            outcomes.append(OutcomeRow(rec["stratum"] or None, rec["escalated"] == "1",
                                       rec["defect"] == "1", rec["missed"] == "1"))
        else:
            raise ValidationError(f"unknown audit row kind {rec['kind']!r}")
    return AuditData(outcomes, complaints, steps)


@dataclass
class AuditReport:
    strata: tuple[str, ...]
    complaints: dict[str, int]
    escalations: dict[str, int]
    correct_escalations: dict[str, int]
    rates: dict[str, float | None]
    raw_rates: dict[str, float | None]
    max_gap: float
    variance_disparity: float
    overall: Confusion
    per_stratum: dict[str, Confusion]
    flags: list[str] = field(default_factory=list)
    attributions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "strata": list(self.strata),
            "complaints": self.complaints,
            "escalations": self.escalations,
            "correct_escalations": self.correct_escalations,
            "rates": self.rates,
            "raw_rates": self.raw_rates,
            "max_gap": self.max_gap,
            "variance_disparity": self.variance_disparity,
            "overall": self.overall.as_dict(),
            "per_stratum": {g: c.as_dict() for g, c in self.per_stratum.items()},
            "equity_sensitive_flags": list(self.flags),
            "attributions": self.attributions,
        }


def compute_audit(data: AuditData, strata: Sequence[str], N_hat: Mapping[str, float],
                  window_width: int) -> AuditReport:
    """Per-stratum escalation rates per estimated incident, gaps and confusion metrics.

    ``N_hat`` holds per-window corrected denominators; they are scaled by the
    number of audited steps over ``window_width``. A stratum with no
    denominator gets rate ``None`` rather than 0.
    """
    if data.steps <= 0:
        raise InsufficientDataError("audit needs a non-empty log")
    strata = tuple(strata)
    per = {g: Confusion() for g in strata}
    overall = Confusion()
    esc = {g: 0 for g in strata}
    for row in data.outcomes:
        c = Confusion(int(row.escalated and row.defect), int(row.escalated and not row.defect),
                      int(not row.escalated and row.missed), int(not row.escalated and not row.missed))
        overall = overall + c
        if row.stratum in per:
            per[row.stratum] = per[row.stratum] + c
            esc[row.stratum] += int(row.escalated)
    scale = data.steps / window_width
    correct = {g: per[g].tp for g in strata}
    rates = {g: (correct[g] / (N_hat[g] * scale) if N_hat.get(g, 0) > 0 else None) for g in strata}
    complaints = {g: int(data.complaints.get(g, 0)) for g in strata}
    raw = {g: (correct[g] / complaints[g] if complaints[g] > 0 else None) for g in strata}
    present = [r for r in rates.values() if r is not None]
    gap = max((abs(a - b) for a, b in itertools.combinations(present, 2)), default=0.0)
    variance = float(np.var(present)) if len(present) >= 2 else 0.0
    return AuditReport(strata, complaints, esc, correct, rates, raw, gap, variance, overall, per)


# --- attribution --------------------------------------------------------------------


@dataclass
class AttributionResult:
    feature_names: tuple[str, ...]
    values: np.ndarray
    baseline: float
    method: str
    prediction: float | None = None
    standard_errors: np.ndarray | None = None
    degenerate: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "baseline": self.baseline,
            "prediction": self.prediction,
            "values": {n: float(v) for n, v in zip(self.feature_names, self.values)},
            "standard_errors": None if self.standard_errors is None else
            {n: float(v) for n, v in zip(self.feature_names, self.standard_errors)},
            "degenerate": list(self.degenerate),
        }

    def ranking(self) -> list[str]:
        order = sorted(range(len(self.values)), key=lambda i: (-abs(float(self.values[i])), i))
        return [self.feature_names[i] for i in order]


MAX_EXACT_FEATURES = 12


def median_background(X: np.ndarray) -> np.ndarray:
    return np.median(np.asarray(X, dtype=float), axis=0)


def _masked_inputs(x: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Row ``m`` keeps features whose bit is set in ``m`` and takes background values elsewhere."""
    n = len(x)
    masks = np.arange(2 ** n)
    keep = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
    return np.where(keep, x, background)


def exact_shapley(model: Callable[[np.ndarray], np.ndarray], x, background,
                  feature_names: Sequence[str] | None = None) -> AttributionResult:
    """Shapley values by enumerating every feature subset.

    ``model`` maps a 2-D array of inputs to one value per row; features
    outside a coalition take their background value.
    """
    x = np.asarray(x, dtype=float)
    background = np.asarray(background, dtype=float)
    n = len(x)
    if n > MAX_EXACT_FEATURES:
        raise ConfigurationError(
            f"exact enumeration supports at most {MAX_EXACT_FEATURES} features, got {n}; "
            "use sampled_shapley or permutation_importance")
    if background.shape != x.shape:
        raise ValidationError("background must match the instance shape")
    values = np.asarray(model(_masked_inputs(x, background)), dtype=float).reshape(-1)
    masks = np.arange(2 ** n)
    sizes = np.array([bin(m).count("1") for m in masks])
    weight_by_size = np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)
                               for s in range(n)])
    phi = np.zeros(n)
    for i in range(n):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        phi[i] = float(np.sum(weight_by_size[sizes[without]] * (values[without | bit] - values[without])))
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(n))
    return AttributionResult(names, phi, float(values[0]), "exact_shapley", prediction=float(values[-1]))


def sampled_shapley(model: Callable[[np.ndarray], np.ndarray], x, background, n_permutations: int,
                    rng: np.random.Generator, feature_names: Sequence[str] | None = None) -> AttributionResult:
    """Monte Carlo Shapley values from random feature orderings, with standard errors."""
    x = np.asarray(x, dtype=float)
    background = np.asarray(background, dtype=float)
    n = len(x)
    if n_permutations < 2:
        raise ConfigurationError("need at least 2 permutations for a standard error")
    contributions = np.zeros((n_permutations, n))
    for p in range(n_permutations):
        order = rng.permutation(n)
        rows = np.tile(background, (n + 1, 1))
        for k, j in enumerate(order):
            rows[k + 1:, j] = x[j]
        vals = np.asarray(model(rows), dtype=float).reshape(-1)
        contributions[p, order] = np.diff(vals)
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(n))
    se = contributions.std(axis=0, ddof=1) / np.sqrt(n_permutations)
    return AttributionResult(names, contributions.mean(axis=0), float(np.asarray(model(background[None]))[0]),
                             "sampled_shapley", standard_errors=se)


def permutation_importance(model: Callable[[np.ndarray], np.ndarray], X, y, metric: Callable,
                           n_repeats: int, rng: np.random.Generator,
                           feature_names: Sequence[str] | None = None) -> AttributionResult:
    """Drop in ``metric(y, model(X))`` when one column is shuffled, averaged over repeats."""
    X = np.asarray(X, dtype=float)
    if len(X) < 50:
        raise InsufficientDataError(f"permutation importance needs at least 50 rows, got {len(X)}")
    if n_repeats < 1:
        raise ConfigurationError("n_repeats must be positive")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    reference = float(metric(y, model(X)))
    drops = np.zeros((n_repeats, X.shape[1]))
    degenerate = []
    for j in range(X.shape[1]):
        if np.all(X[:, j] == X[0, j]):
            degenerate.append(names[j])
            continue
        for r in range(n_repeats):
            shuffled = X.copy()
            shuffled[:, j] = X[rng.permutation(len(X)), j]
            drops[r, j] = reference - float(metric(y, model(shuffled)))
    se = drops.std(axis=0, ddof=1) / np.sqrt(n_repeats) if n_repeats > 1 else np.zeros(X.shape[1])
    return AttributionResult(names, drops.mean(axis=0), reference, "permutation",
                             standard_errors=se, degenerate=tuple(degenerate))


def flag_equity_sensitive(attribution: AttributionResult, sensitive: Sequence[str], top_k: int = 5) -> list[str]:
    """Tagged geographic or demographic features ranked within the top ``top_k`` by |attribution|."""
    top = attribution.ranking()[:top_k]
    return [name for name in top if name in set(sensitive)]
