"""Per-branch calibration: temperature scaling and split-conformal widening."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractViolation, InputError
from .symptom_space import softmax

REGRESSION = "regression"
CLASSIFICATION = "classification"

LOG_T_BOUNDS = (-4.0, 4.0)
GOLDEN_TOL = 1e-4


class CalibrationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ClassifierOutput:
    logits: tuple | None = None
    probabilities: tuple | None = None
    label: int | None = None

    def __post_init__(self):
        if self.logits is None and self.probabilities is None:
            raise InputError("classifier output needs logits or probabilities")
        if self.probabilities is not None:
            p = np.asarray(self.probabilities, dtype=float)
            if len(p) < 2 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise InputError(f"invalid probability vector {tuple(p)}")
        if self.logits is not None and len(self.logits) < 2:
            raise InputError("need at least two classes")
        if self.label is not None and not 0 <= self.label < self.n_classes:
            raise InputError(f"label {self.label} outside 0..{self.n_classes - 1}")

    @property
    def n_classes(self) -> int:
        return len(self.logits if self.logits is not None else self.probabilities)

    def as_logits(self) -> np.ndarray:
        if self.logits is not None:
            return np.asarray(self.logits, dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.probabilities, dtype=float))


@dataclass(frozen=True)
class RegressorOutput:
    point: float
    q_low: float
    q_high: float
    label: float | None = None

    def __post_init__(self):
        if not self.q_low <= self.q_high:
            raise InputError(f"q_low={self.q_low} > q_high={self.q_high}")


@dataclass(frozen=True)
class CalibratedPrediction:
    kind: str
    point: float
    width: float
    probabilities: tuple | None = None
    prediction_set: tuple | None = None
    interval: tuple | None = None
    flags: tuple = ()

    def contains(self, label) -> bool:
        if self.kind == CLASSIFICATION:
            return int(label) in self.prediction_set
        lo, hi = self.interval
        return lo <= label <= hi


@dataclass(frozen=True)
class ConformalModel:
    q_hat: float
    alpha: float
    n_cal: int
    score_kind: str
    unbounded: bool = False

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TemperatureModel:
    T: float
    nll_before: float
    nll_after: float
    warnings: tuple = field(default=())

    def apply(self, logits) -> np.ndarray:
        return softmax(np.asarray(logits, dtype=float) / self.T)


def conformal_residual(y: float, q_low: float, q_high: float) -> float:
    """Signed distance of ``y`` outside the band; negative when inside."""
    return max(q_low - y, y - q_high)


def conformal_rank(n: int, alpha: float) -> int:
    """1-based order statistic ``ceil((n + 1)(1 - alpha))`` used for q_hat."""
    # rounding guards against 1 - alpha landing a hair above an integer product
    return math.ceil(round((n + 1) * (1.0 - alpha), 9))


def _conformal_quantile(scores: Sequence[float], alpha: float, kind: str) -> ConformalModel:
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    s = np.sort(np.asarray(scores, dtype=float))
    n = len(s)
    if n == 0:
        raise InputError("empty calibration set")
    k = conformal_rank(n, alpha)
    if k > n:
        warnings.warn(
            f"calibration set of {n} too small for alpha={alpha}; q_hat is unbounded",
            CalibrationWarning,
            stacklevel=3,
        )
        return ConformalModel(math.inf, alpha, n, kind, unbounded=True)
    return ConformalModel(float(s[k - 1]), alpha, n, kind)


def fit_conformal_regression(calibration: Sequence[RegressorOutput], alpha: float) -> ConformalModel:
    scores = [conformal_residual(r.label, r.q_low, r.q_high) for r in calibration]
    return _conformal_quantile(scores, alpha, REGRESSION)


def apply_conformal_regression(
    pred: RegressorOutput, model: ConformalModel, clamp_nonnegative: bool = False
) -> CalibratedPrediction:
    if model.score_kind != REGRESSION:
        raise ContractViolation(f"conformal model of kind {model.score_kind!r} used for regression")
    q_hat = max(model.q_hat, 0.0) if clamp_nonnegative else model.q_hat
    lo, hi = pred.q_low - q_hat, pred.q_high + q_hat
    flags = ("unbounded_interval",) if math.isinf(q_hat) else ()
    return CalibratedPrediction(
        kind=REGRESSION,
        point=pred.point,
        width=hi - lo,
        interval=(lo, hi),
        flags=flags,
    )


def mean_nll(logits: np.ndarray, labels: np.ndarray, T: float = 1.0) -> float:
    z = logits / T
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(len(labels)), labels]))


def _golden_section(f, a: float, b: float, tol: float) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def fit_temperature(calibration: Sequence[ClassifierOutput]) -> TemperatureModel:
    """Fit a single temperature by minimizing mean NLL over log T in [-4, 4].

    Falls back to T = 1 when the search does not beat the untempered NLL, so
    the fitted model never increases NLL on the fitting split.
    """
    if not calibration:
        raise InputError("empty calibration set")
    if any(c.label is None for c in calibration):
        raise InputError("temperature fitting requires labelled outputs")
    logits = np.stack([c.as_logits() for c in calibration])
    labels = np.array([c.label for c in calibration])
    if not np.all(np.isfinite(logits)):
        logits = np.where(np.isfinite(logits), logits, -1e6)
    nll_before = mean_nll(logits, labels)
    if len(np.unique(labels)) < 2:
        warnings.warn("single-class calibration set; using T=1", CalibrationWarning, stacklevel=2)
        return TemperatureModel(1.0, nll_before, nll_before, ("single_class",))

    log_t = _golden_section(lambda lt: mean_nll(logits, labels, math.exp(lt)), *LOG_T_BOUNDS, GOLDEN_TOL)
    T = math.exp(log_t)
    nll_after = mean_nll(logits, labels, T)
    if nll_after > nll_before:
        T, nll_after = 1.0, nll_before
    return TemperatureModel(T, nll_before, nll_after)


def fit_conformal_classification(
    calibration: Sequence[ClassifierOutput], alpha: float
) -> ConformalModel:
    """Split-conformal threshold on the score ``1 - p(true class)``.

    ``calibration`` must already carry post-temperature probabilities.
    """
    scores = []
    for c in calibration:
        if c.label is None:
            raise InputError("conformal fitting requires labelled outputs")
        p = c.probabilities if c.probabilities is not None else softmax(c.logits)
        scores.append(1.0 - float(p[c.label]))
    return _conformal_quantile(scores, alpha, CLASSIFICATION)


def apply_conformal_classification(probabilities, model: ConformalModel) -> CalibratedPrediction:
    if model.score_kind != CLASSIFICATION:
        raise ContractViolation(f"conformal model of kind {model.score_kind!r} used for classification")
    p = np.asarray(probabilities, dtype=float)
    # membership uses the same score form as calibration to avoid 1 - (1 - p) drift
    members = tuple(int(k) for k in np.flatnonzero(1.0 - p <= model.q_hat))
    flags = []
    if not members:
        members = (int(np.argmax(p)),)
        flags.append("empty_set_replaced")
    if model.unbounded:
        flags.append("unbounded_set")
    return CalibratedPrediction(
        kind=CLASSIFICATION,
        point=int(np.argmax(p)),
        width=len(members),
        probabilities=tuple(float(x) for x in p),
        prediction_set=members,
        flags=tuple(flags),
    )


def dump_models(temperature: TemperatureModel | None, conformal: ConformalModel) -> str:
    """Canonical JSON for a fitted calibration bundle."""
    doc = {
        "kind": conformal.score_kind,
        "alpha": conformal.alpha,
        "q_hat": None if math.isinf(conformal.q_hat) else conformal.q_hat,
        "unbounded": conformal.unbounded,
        "n_cal": conformal.n_cal,
        "T": temperature.T if temperature is not None else None,
    }
    if temperature is not None:
        doc["nll_before"] = temperature.nll_before
        doc["nll_after"] = temperature.nll_after
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def load_models(text: str) -> tuple[TemperatureModel | None, ConformalModel]:
    doc = json.loads(text)
    try:
        q_hat = math.inf if doc["q_hat"] is None else float(doc["q_hat"])
        conformal = ConformalModel(
            q_hat, float(doc["alpha"]), int(doc["n_cal"]), doc["kind"], bool(doc.get("unbounded", False))
        )
    except KeyError as e:
        raise InputError(f"calibration document missing field {e}") from None
    temperature = None
    if doc.get("T") is not None:
        temperature = TemperatureModel(
            float(doc["T"]), float(doc.get("nll_before", math.nan)), float(doc.get("nll_after", math.nan))
        )
    return temperature, conformal
