"""Deterministic four-action routing with validation-frozen thresholds."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .calibration import CalibratedPrediction
from .errors import ConfigurationError, ContractViolation, InputError
from .symptom_space import ReliabilitySignals

PREDICT = "PREDICT"
ABSTAIN = "ABSTAIN"
REACQUIRE = "REACQUIRE"
REFER = "REFER"
ACTIONS = (PREDICT, ABSTAIN, REACQUIRE, REFER)

DEFAULT_QUANTILES = {"quality": 20.0, "u_abstain": 70.0, "u_refer": 85.0, "ood": 85.0}

# Frozen PADS operating thresholds, kept as a config fixture.
PADS_THRESHOLDS = {
    "tau_q": 0.9816,
    "tau_u_abstain": 0.2182,
    "tau_u_refer": 0.2427,
    "tau_ood": 0.5706,
}


def nearest_rank(values: Sequence[float], percentile: float) -> float:
    """Order statistic ``floor(p * n / 100) + 1`` (clamped to n) of ``values``.

    This is the smallest sample whose empirical CDF strictly exceeds ``p``
    percent, so e.g. P20 of five points is the 2nd smallest.
    """
    if not 0.0 < percentile < 100.0:
        raise ConfigurationError(f"percentile must lie in (0, 100), got {percentile}")
    s = sorted(values)
    if not s:
        raise ConfigurationError("cannot take a quantile of no values")
    k = math.floor(round(percentile * len(s) / 100.0, 9)) + 1
    return float(s[min(k, len(s)) - 1])


def coverage_rank(values: Sequence[float], budget: float) -> float:
    """Smallest sample ``v`` with fraction(values <= v) >= ``budget``."""
    if not 0.0 < budget <= 1.0:
        raise ConfigurationError(f"coverage budget must lie in (0, 1], got {budget}")
    s = sorted(values)
    if not s:
        raise ConfigurationError("cannot take a quantile of no values")
    k = max(math.ceil(round(budget * len(s), 9)), 1)
    return float(s[k - 1])


@dataclass(frozen=True)
class ThresholdConfig:
    tau_q: float
    tau_c: float
    tau_ood: float
    tau_u_abstain: float
    tau_u_refer: float
    tau_w: float
    quantile_spec: dict = field(default_factory=dict)
    refer_on_ood: bool = True
    refer_on_uncertainty: bool = False
    u_min: float = 0.0
    u_max: float = 1.0
    frozen: bool = False

    def freeze(self) -> "ThresholdConfig":
        for name in ("tau_q", "tau_c", "tau_ood", "tau_u_abstain", "tau_u_refer", "tau_w"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ConfigurationError(f"threshold {name}={v} is not finite")
        return replace(self, frozen=True)

    def to_json(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @cached_property
    def digest(self) -> str:
        return "sha256:" + hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def from_json(cls, doc: dict) -> "ThresholdConfig":
        try:
            return cls(**doc)
        except TypeError as e:
            raise InputError(f"bad threshold document: {e}") from None


@dataclass(frozen=True)
class RoutingDecision:
    sample_id: str
    action: str
    trigger: str
    trigger_value: float | None
    threshold_value: float | None
    config_digest: str
    flags: tuple = ()

    def to_json(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


def fit_thresholds(
    validation: Sequence[tuple[ReliabilitySignals, CalibratedPrediction]],
    quantile_spec: dict | None = None,
    coverage_budget: float = 0.8,
    tau_c: float = 1.0,
    refer_on_ood: bool = True,
    refer_on_uncertainty: bool = False,
) -> ThresholdConfig:
    """Resolve every routing threshold from validation signals and freeze it.

    ``tau_c`` is a per-protocol constant, never fitted. ``tau_w`` is the
    width below which ``coverage_budget`` of validation samples fall.
    """
    if not validation:
        raise ConfigurationError("cannot fit thresholds on an empty validation split")
    spec = dict(DEFAULT_QUANTILES)
    spec.update(quantile_spec or {})
    unknown = set(spec) - set(DEFAULT_QUANTILES)
    if unknown:
        raise ConfigurationError(f"unknown quantile levels {sorted(unknown)}")
    q = [s.quality for s, _ in validation]
    u = [s.uncertainty for s, _ in validation]
    o = [s.ood for s, _ in validation]
    w = [p.width for _, p in validation]
    spec_record = {k: float(v) for k, v in sorted(spec.items())}
    spec_record["width_budget"] = float(coverage_budget)
    spec_record["rule"] = "order_statistic floor(p*n/100)+1; width ceil(budget*n)"
    config = ThresholdConfig(
        tau_q=nearest_rank(q, spec["quality"]),
        tau_c=float(tau_c),
        tau_ood=nearest_rank(o, spec["ood"]),
        tau_u_abstain=nearest_rank(u, spec["u_abstain"]),
        tau_u_refer=nearest_rank(u, spec["u_refer"]),
        tau_w=coverage_rank(w, coverage_budget),
        quantile_spec=spec_record,
        refer_on_ood=refer_on_ood,
        refer_on_uncertainty=refer_on_uncertainty,
        u_min=float(min(u)),
        u_max=float(max(u)),
    )
    return config.freeze()


def route(
    signals: ReliabilitySignals,
    pred: CalibratedPrediction,
    config: ThresholdConfig,
    sample_id: str = "",
    flags: Iterable[str] = (),
) -> RoutingDecision:
    """Pick the first action whose clause fires, in priority order.

    REACQUIRE (quality, then completeness) beats REFER (ood, then refer
    uncertainty) beats ABSTAIN (uncertainty, then width). Comparisons are
    strict, so a signal sitting exactly on its threshold never fires.
    """
    if not config.frozen:
        raise ContractViolation("routing requires a frozen ThresholdConfig")
    clauses = [
        (REACQUIRE, "quality", signals.quality, config.tau_q, signals.quality < config.tau_q),
        (REACQUIRE, "completeness", signals.completeness, config.tau_c,
         signals.completeness < config.tau_c),
    ]
    if config.refer_on_ood:
        clauses.append((REFER, "ood", signals.ood, config.tau_ood, signals.ood > config.tau_ood))
    if config.refer_on_uncertainty:
        clauses.append((REFER, "uncertainty", signals.uncertainty, config.tau_u_refer,
                        signals.uncertainty > config.tau_u_refer))
    clauses += [
        (ABSTAIN, "uncertainty", signals.uncertainty, config.tau_u_abstain,
         signals.uncertainty > config.tau_u_abstain),
        (ABSTAIN, "width", pred.width, config.tau_w, pred.width > config.tau_w),
    ]
    all_flags = tuple(flags) + tuple(pred.flags)
    for action, trigger, value, threshold, fired in clauses:
        if fired:
            return RoutingDecision(sample_id, action, trigger, float(value), float(threshold),
                                   config.digest, all_flags)
    return RoutingDecision(sample_id, PREDICT, "none", None, None, config.digest, all_flags)


def route_batch(items, config: ThresholdConfig, threads: int = 1) -> list[RoutingDecision]:
    """Route ``(sample_id, signals, pred, flags)`` tuples, preserving input order."""
    def one(item):
        sample_id, signals, pred, flags = item
        return route(signals, pred, config, sample_id, flags)

    if threads <= 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, items))


def fired(decision: RoutingDecision) -> bool:
    """Re-evaluate the audited comparison; True when it reproduces the action."""
    if decision.action == PREDICT:
        return decision.trigger == "none"
    if decision.trigger in ("quality", "completeness"):
        return decision.trigger_value < decision.threshold_value
    return decision.trigger_value > decision.threshold_value


@dataclass
class ActionSummary:
    counts: dict
    fractions: dict
    conditional: dict
    metric: str | None = None
    overall: float | None = None
    coverage: float = 0.0
    selective_risk: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


def summarize_actions(
    decisions: Sequence[RoutingDecision],
    labels: Sequence | None = None,
    predictions: Sequence | None = None,
    task: str = "classification",
) -> ActionSummary:
    """Per-action counts, fractions and (with labels) conditional accuracy or MAE."""
    n = len(decisions)
    counts = {a: 0 for a in ACTIONS}
    for d in decisions:
        counts[d.action] += 1
    fractions = {a: (counts[a] / n if n else 0.0) for a in ACTIONS}
    summary = ActionSummary(counts=counts, fractions=fractions, conditional={a: None for a in ACTIONS},
                            coverage=fractions[PREDICT])
    if labels is None or predictions is None or n == 0:
        return summary
    if len(labels) != n or len(predictions) != n:
        raise InputError("labels and predictions must align with decisions")
    y = np.asarray(labels, dtype=float)
    yhat = np.asarray(predictions, dtype=float)
    actions = np.array([d.action for d in decisions])
    if task == "classification":
        per = (y == yhat).astype(float)
        summary.metric = "accuracy"
    else:
        per = np.abs(y - yhat)
        summary.metric = "mae"
    summary.overall = float(per.mean())
    for a in ACTIONS:
        sel = actions == a
        if sel.any():
            summary.conditional[a] = float(per[sel].mean())
    if summary.conditional[PREDICT] is not None and task == "classification":
        summary.selective_risk = 1.0 - summary.conditional[PREDICT]
    elif task != "classification":
        summary.selective_risk = summary.conditional[PREDICT]
    return summary


def risk_coverage_curve(uncertainties: Sequence[float], correctness: Sequence[bool]) -> list[tuple[float, float]]:
    """Selective risk at every acceptance threshold over distinct uncertainties.

    Samples with equal uncertainty are accepted together; the last point is
    always coverage 1 with the overall error rate.
    """
    u = np.asarray(uncertainties, dtype=float)
    ok = np.asarray(correctness, dtype=bool)
    if u.shape != ok.shape or u.size == 0:
        raise InputError("uncertainties and correctness must be equal-length and non-empty")
    order = np.argsort(u, kind="stable")
    u_sorted, ok_sorted = u[order], ok[order]
    cum_ok = np.cumsum(ok_sorted)
    # last index of each tie group
    ends = np.flatnonzero(np.append(u_sorted[1:] != u_sorted[:-1], True))
    n = u.size
    # risk as 1 - accuracy so the full-coverage point equals 1 - overall accuracy bit-for-bit
    return [((e + 1) / n, 1.0 - float(cum_ok[e]) / (e + 1)) for e in ends]
