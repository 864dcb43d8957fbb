"""Reporting-rate correction.

Observed complaint counts mix true incident prevalence with how readily
residents file. Duplicate reports identify the filing propensity of a tract;
dividing the observed count by that propensity gives an estimate of latent
need, which is summed per stratum to form the equity denominators.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from equitriage.errors import (
    ConfigurationError,
    DataIntegrityError,
    InsufficientDataError,
    ValidationError,
)

RHO_CLAMP = 1e-4


@dataclass(frozen=True)
class PropensityEstimate:
    tract_id: str | None
    rho_hat: float
    variance: float
    source: str  # "duplicates" or "proxy"
    window_end_step: int = 0

    def __post_init__(self):
        if not 0.0 < self.rho_hat <= 1.0:
            raise ValidationError(f"rho_hat must be in (0, 1], got {self.rho_hat}")
        if self.variance < 0:
            raise ValidationError("variance must be non-negative")
        if self.source not in ("duplicates", "proxy"):
            raise ValidationError(f"unknown propensity source {self.source!r}")


@dataclass(frozen=True)
class ProxyModel:
    beta0: float
    beta: tuple[float, float, float, float]
    training_mse: float = 0.0

    def linear(self, x: Sequence[float]) -> float:
        return self.beta0 + float(np.dot(self.beta, x))


@dataclass(frozen=True)
class CalibrationConfig:
    window_width: int = 168
    m_min: int = 10
    rho_min: float = 0.05
    bootstrap_B: int = 200
    audit_tau: float = 0.05

    def __post_init__(self):
        if self.window_width < 1:
            raise ConfigurationError("window_width must be >= 1")
        if not 0.0 < self.rho_min < 1.0:
            raise ConfigurationError("rho_min must be in (0, 1)")
        if self.m_min < 1:
            raise ConfigurationError("m_min must be >= 1")
        if self.bootstrap_B < 2:
            raise ConfigurationError("bootstrap_B must be >= 2")
        if self.audit_tau <= 0:
            raise ConfigurationError("audit_tau must be positive")


@dataclass(frozen=True)
class CorrectedCounts:
    I_hat: dict[str, float]
    N_hat: dict[str, float]
    window: tuple[int, int] = (0, 0)
    observed: dict[str, float] = field(default_factory=dict)
    raw_N: dict[str, float] = field(default_factory=dict)
    empty_strata: tuple[str, ...] = ()

    def scaled(self, factor: float) -> "CorrectedCounts":
        """Rescale every count, e.g. from one window to an episode length."""
        return CorrectedCounts(
            I_hat={k: v * factor for k, v in self.I_hat.items()},
            N_hat={k: v * factor for k, v in self.N_hat.items()},
            window=self.window,
            observed={k: v * factor for k, v in self.observed.items()},
            raw_N={k: v * factor for k, v in self.raw_N.items()},
            empty_strata=self.empty_strata,
        )


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def estimate_propensity_duplicates(C: int, D: int, tract_id: str | None = None,
                                   window_end_step: int = 0) -> PropensityEstimate:
    """Moment estimator ``1 - D/C`` with its binomial delta-method variance."""
    if C < 0 or D < 0:
        raise DataIntegrityError(f"counts must be non-negative (C={C}, D={D})")
    if C == 0:
        raise InsufficientDataError("no complaints observed; fall back to the covariate proxy")
    if D >= C:
        raise DataIntegrityError(f"duplicates ({D}) must be fewer than complaints ({C})")
    dup_share = D / C
    return PropensityEstimate(
        tract_id=tract_id,
        rho_hat=1.0 - dup_share,
        variance=dup_share * (1.0 - dup_share) / C,
        source="duplicates",
        window_end_step=window_end_step,
    )


def fit_proxy(training_tracts: Sequence[tuple[Sequence[float], float]], lr: float = 0.1,
              n_iter: int = 5000, tol: float = 1e-10) -> ProxyModel:
    """Fit ``rho ~ sigmoid(beta0 + beta . x)`` on tracts with duplicate-based estimates.

    Starts from least squares on the logit of the targets, then refines the
    probability-scale squared error by full-batch gradient descent.
    """
    if len(training_tracts) < 5:
        raise InsufficientDataError(f"need at least 5 training tracts, got {len(training_tracts)}")
    X = np.array([list(x) for x, _ in training_tracts], dtype=float)
    if X.ndim != 2 or X.shape[1] != 4:
        raise ValidationError("proxy covariates must have 4 components")
    y = np.clip(np.array([r for _, r in training_tracts], dtype=float), RHO_CLAMP, 1.0 - RHO_CLAMP)
    A = np.hstack([np.ones((len(X), 1)), X])
    logit = np.log(y / (1.0 - y))
    theta, *_ = np.linalg.lstsq(A, logit, rcond=None)

    n = len(y)
    pred = sigmoid(A @ theta)
    loss = float(np.mean((pred - y) ** 2))
    for _ in range(n_iter):
        grad = A.T @ (2.0 * (pred - y) * pred * (1.0 - pred)) / n
        theta = theta - lr * grad
        pred = sigmoid(A @ theta)
        new_loss = float(np.mean((pred - y) ** 2))
        if abs(loss - new_loss) < tol:
            loss = new_loss
            break
        loss = new_loss
    return ProxyModel(beta0=float(theta[0]), beta=tuple(float(b) for b in theta[1:]), training_mse=loss)


def predict_propensity(model: ProxyModel, x: Sequence[float], rho_min: float = 0.05,
                       tract_id: str | None = None, window_end_step: int = 0) -> PropensityEstimate:
    x = np.asarray(x, dtype=float)
    if x.shape != (4,) or not np.all(np.isfinite(x)):
        raise ValidationError("covariates must be 4 finite numbers")
    rho = float(sigmoid(model.linear(x)))
    return PropensityEstimate(
        tract_id=tract_id,
        rho_hat=min(1.0, max(rho, rho_min)),
        variance=model.training_mse,
        source="proxy",
        window_end_step=window_end_step,
    )


def corrected_count(C: float, rho_hat: float, rho_min: float = 0.05) -> float:
    if C == 0:
        return 0.0
    return C / max(rho_hat, rho_min)


def correct_counts(C: Mapping[str, float], rho_hat: Mapping[str, float],
                   strata: Mapping[str, str | None], config: CalibrationConfig | None = None,
                   stratum_order: Iterable[str] | None = None,
                   window: tuple[int, int] = (0, 0)) -> CorrectedCounts:
    """Per-tract ``I_hat = C / max(rho_hat, rho_min)`` and per-stratum sums.

    Tracts whose stratum is ``None`` still get an ``I_hat`` but are left out
    of every stratum total. Strata whose total is zero are listed in
    ``empty_strata``.
    """
    config = config or CalibrationConfig()
    I_hat: dict[str, float] = {}
    for tract, count in C.items():
        if count < 0:
            raise DataIntegrityError(f"{tract}: negative complaint count")
        if tract not in rho_hat:
            raise DataIntegrityError(f"{tract}: missing propensity estimate")
        I_hat[tract] = corrected_count(count, rho_hat[tract], config.rho_min)
    labels = list(stratum_order) if stratum_order is not None else sorted(
        {s for s in strata.values() if s is not None})
    N_hat = {g: 0.0 for g in labels}
    raw_N = {g: 0.0 for g in labels}
    for tract, value in I_hat.items():
        g = strata.get(tract)
        if g is None:
            continue
        N_hat[g] = N_hat.get(g, 0.0) + value
        raw_N[g] = raw_N.get(g, 0.0) + C[tract]
    empty = tuple(g for g, v in N_hat.items() if v <= 0)
    return CorrectedCounts(I_hat=I_hat, N_hat=N_hat, window=window, observed=dict(C),
                           raw_N=raw_N, empty_strata=empty)


def _truncated_normal(rng: np.random.Generator, mean: np.ndarray, sd: np.ndarray,
                      lo: float, hi: float, max_tries: int = 50) -> np.ndarray:
    draws = rng.normal(mean, sd)
    bad = (draws < lo) | (draws > hi)
    tries = 0
    while bad.any() and tries < max_tries:
        draws[bad] = rng.normal(mean[bad], sd[bad])
        bad = (draws < lo) | (draws > hi)
        tries += 1
    return np.clip(draws, lo, hi)


def bootstrap_equity_interval(C: Mapping[str, float], estimates: Mapping[str, PropensityEstimate],
                              strata: Mapping[str, str | None], n: Mapping[str, float],
                              equity_fn, config: CalibrationConfig | None = None,
                              rng: np.random.Generator | None = None,
                              stratum_order: Sequence[str] | None = None) -> tuple[float, float]:
    """5th and 95th percentile of the equity term under propensity uncertainty.

    Each replicate redraws every tract's ``rho_hat`` from a normal with the
    estimated variance, truncated to ``[rho_min, 1]``, recomputes the stratum
    denominators and evaluates ``equity_fn(n, N_hat)``.
    """
    config = config or CalibrationConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    tracts = sorted(C)
    labels = list(stratum_order) if stratum_order is not None else sorted(
        {s for s in strata.values() if s is not None})
    mean = np.array([estimates[t].rho_hat for t in tracts], dtype=float)
    sd = np.sqrt(np.array([estimates[t].variance for t in tracts], dtype=float))
    counts = np.array([C[t] for t in tracts], dtype=float)
    membership = np.array([[strata.get(t) == g for t in tracts] for g in labels], dtype=float)
    if not (membership @ counts > 0).any():
        raise InsufficientDataError("no stratum has a positive denominator")

    def term(rho: np.ndarray) -> float:
        I_hat = np.where(counts > 0, counts / np.maximum(rho, config.rho_min), 0.0)
        N_hat = dict(zip(labels, membership @ I_hat))
        return equity_fn(n, N_hat)

    if not np.any(sd > 0):
        point = term(mean)
        return point, point
    values = np.empty(config.bootstrap_B)
    for b in range(config.bootstrap_B):
        draw = mean.copy()
        live = sd > 0
        draw[live] = _truncated_normal(rng, mean[live], sd[live], config.rho_min, 1.0)
        values[b] = term(draw)
    lo, hi = np.quantile(values, [0.05, 0.95], method="linear")
    return float(lo), float(hi)


# delimited-text tract-window table: tract_id, C, D, cov1..cov4
TRACT_TABLE_FIELDS = ("tract_id", "C", "D", "income", "college", "english", "renter")


def read_tract_table(text: str) -> list[dict]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        missing = [f for f in TRACT_TABLE_FIELDS if f not in rec]
        if missing:
            raise ValidationError(f"tract table missing columns {missing}")
        rows.append({
            "tract_id": rec["tract_id"],
            "C": int(rec["C"]),
            "D": int(rec["D"]),
            "covariates": tuple(float(rec[k]) for k in TRACT_TABLE_FIELDS[3:]),
            "stratum": rec.get("stratum") or None,
        })
    return rows


def write_corrected_counts(counts: CorrectedCounts, estimates: Mapping[str, PropensityEstimate],
                           strata: Mapping[str, str | None]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["tract_id", "stratum", "C", "rho_hat", "variance", "source", "I_hat"])
    for tract in sorted(counts.I_hat):
        est = estimates[tract]
        w.writerow([tract, strata.get(tract) or "", _num(counts.observed.get(tract, 0)),
                    repr(est.rho_hat), repr(est.variance), est.source, repr(counts.I_hat[tract])])
    for g, v in counts.N_hat.items():
        w.writerow([f"stratum:{g}", g, _num(counts.raw_N.get(g, 0.0)), "", "", "", repr(v)])
    return out.getvalue()


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))

