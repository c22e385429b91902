"""Leak-free temporal anchoring for longitudinal per-subject prediction.

A subject's visits are ordered by ``(timestamp, sample_id)``. Rows sharing a
timestamp belong to the same visit, so ``n_anchor`` counts distinct
timestamps and an anchor/test boundary never splits a tie. Baselines see one
label per visit, the mean of its tied rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError
from .metrics import ccc, regression_metrics


@dataclass(frozen=True)
class Visit:
    timestamp: float
    label: float
    sample_id: str = ""
    features: tuple | None = None


@dataclass(frozen=True)
class VisitSeries:
    subject_id: str
    visits: tuple

    def __post_init__(self):
        if not self.visits:
            raise InputError(f"subject {self.subject_id!r} has no visits")
        ordered = tuple(sorted(self.visits, key=lambda v: (v.timestamp, v.sample_id)))
        object.__setattr__(self, "visits", ordered)


@dataclass(frozen=True)
class AnchorSplit:
    subject_id: str
    anchors: tuple
    test: tuple

    @property
    def excluded(self) -> bool:
        return not self.test

    @property
    def anchor_labels(self) -> list[float]:
        """One label per anchor visit (tied rows averaged), in time order."""
        groups: dict[float, list[float]] = {}
        for v in self.anchors:
            groups.setdefault(v.timestamp, []).append(v.label)
        return [float(np.mean(g)) for g in groups.values()]


def split_anchors(series: VisitSeries, n_anchor: int) -> AnchorSplit:
    """The first ``n_anchor`` distinct visit times form the anchor set."""
    if n_anchor < 0:
        raise InputError("n_anchor must be nonnegative")
    times = sorted({v.timestamp for v in series.visits})
    if n_anchor == 0:
        return AnchorSplit(series.subject_id, (), series.visits)
    if n_anchor >= len(times):
        return AnchorSplit(series.subject_id, series.visits, ())
    cutoff = times[n_anchor - 1]
    anchors = tuple(v for v in series.visits if v.timestamp <= cutoff)
    test = tuple(v for v in series.visits if v.timestamp > cutoff)
    return AnchorSplit(series.subject_id, anchors, test)


def _require_anchors(anchor_labels):
    if len(anchor_labels) == 0:
        raise InputError("label-only baselines need at least one anchor visit")


def last_anchor_predict(anchor_labels: Sequence[float], n_test: int) -> list[float]:
    _require_anchors(anchor_labels)
    return [float(anchor_labels[-1])] * n_test


def anchor_mean_predict(anchor_labels: Sequence[float], n_test: int) -> list[float]:
    _require_anchors(anchor_labels)
    return [float(np.mean(anchor_labels))] * n_test


# Baselines see only anchor labels and the test count, never test data.
def last_anchor_baseline(split: AnchorSplit) -> list[float]:
    return last_anchor_predict(split.anchor_labels, len(split.test))


def anchor_mean_baseline(split: AnchorSplit) -> list[float]:
    return anchor_mean_predict(split.anchor_labels, len(split.test))


def personalized_residual_target(split: AnchorSplit) -> list[tuple]:
    """Pairs ``(features, y - anchor_mean)`` for each test visit."""
    _require_anchors(split.anchors)
    base = float(np.mean(split.anchor_labels))
    return [(v.features, v.label - base) for v in split.test]


def recompose(anchor_mean: float, residual: float) -> float:
    return anchor_mean + residual


class MeanPredictor:
    def __init__(self, train_labels: Sequence[float]):
        if len(train_labels) == 0:
            raise InputError("mean predictor needs training labels")
        self.mean = float(np.mean(train_labels))

    def predict(self, n: int) -> list[float]:
        return [self.mean] * n


def mean_predictor_baseline(train_labels: Sequence[float]) -> MeanPredictor:
    return MeanPredictor(train_labels)


class ResidualLeastSquares:
    """Ordinary least squares with intercept, fitted on anchor residuals."""

    def __init__(self):
        self.coef = None

    def fit(self, X, r):
        X = np.asarray(X, dtype=float)
        A = np.column_stack([np.ones(len(X)), X])
        self.coef = np.linalg.lstsq(A, np.asarray(r, dtype=float), rcond=None)[0]
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        return np.column_stack([np.ones(len(X)), X]) @ self.coef


@dataclass
class AnchorEvaluation:
    n_anchor: int
    n_subjects: int
    excluded: list = field(default_factory=list)
    pooled: dict = field(default_factory=dict)
    per_subject_mae: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "n_anchor": self.n_anchor,
            "n_subjects": self.n_subjects,
            "exclusions": {"count": len(self.excluded), "subjects": self.excluded},
            "pooled": self.pooled,
            "per_subject_macro_mae": self.per_subject_mae,
        }


def evaluate_anchoring(series: Iterable[VisitSeries], n_anchor: int,
                       train_labels: Sequence[float] | None = None) -> AnchorEvaluation:
    """Pool test visits across subjects and score each baseline on them.

    Subjects are processed in ``subject_id`` order so pooled results do not
    depend on input order. ``train_labels`` feeds the constant mean
    predictor; without it the pooled anchor labels are used.
    """
    series = sorted(series, key=lambda s: s.subject_id)
    splits = [split_anchors(s, n_anchor) for s in series]
    kept = [sp for sp in splits if not sp.excluded]
    ev = AnchorEvaluation(n_anchor=n_anchor, n_subjects=len(splits),
                          excluded=[sp.subject_id for sp in splits if sp.excluded])
    if not kept:
        return ev

    y = np.array([v.label for sp in kept for v in sp.test])
    preds: dict[str, np.ndarray] = {}
    mean_source = train_labels if train_labels else [lab for sp in kept for lab in sp.anchor_labels]
    if mean_source:
        mp = mean_predictor_baseline(mean_source)
        preds["mean_predictor"] = np.array([p for sp in kept for p in mp.predict(len(sp.test))])
    if n_anchor > 0:
        preds["last_anchor"] = np.array([p for sp in kept for p in last_anchor_baseline(sp)])
        preds["anchor_mean"] = np.array([p for sp in kept for p in anchor_mean_baseline(sp)])
        has_features = all(v.features is not None for sp in kept for v in sp.anchors + sp.test)
        if has_features:
            preds["personalized_residual"] = _personalized(kept)

    offsets = np.cumsum([0] + [len(sp.test) for sp in kept])
    for name, p in preds.items():
        rep = regression_metrics(y, p)
        ev.pooled[name] = {"mae": rep.mae, "rmse": rep.rmse, "ccc": ccc(y, p), "r2": rep.r2, "n": rep.n}
        per_subject = [np.mean(np.abs(y[a:b] - p[a:b])) for a, b in zip(offsets[:-1], offsets[1:])]
        ev.per_subject_mae[name] = float(np.mean(per_subject))
    return ev


def _personalized(kept: Sequence[AnchorSplit]) -> np.ndarray:
    # fit on anchor-visit residuals only, so no test label reaches the regressor
    X_fit, r_fit = [], []
    for sp in kept:
        base = float(np.mean(sp.anchor_labels))
        for v in sp.anchors:
            X_fit.append(v.features)
            r_fit.append(v.label - base)
    model = ResidualLeastSquares().fit(X_fit, r_fit)
    out = []
    for sp in kept:
        base = float(np.mean(sp.anchor_labels))
        X_test = [v.features for v in sp.test]
        out.extend(recompose(base, r) for r in model.predict(X_test))
    return np.array(out)
