"""Regression, classification and reliability metrics with closed-form CIs.

Undefined values (constant targets, empty classes) come back as ``None``
rather than NaN so they serialize as JSON ``null``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import InputError

Z95 = 1.959963984540054


@dataclass
class RegressionReport:
    mae: float
    rmse: float
    r2: float | None
    pearson: float | None
    spearman: float | None
    ccc: float | None
    n: int

    def to_json(self):
        return asdict(self)


@dataclass
class ClassificationReport:
    n: int
    accuracy: float
    accuracy_ci: tuple
    f1: float
    f1_ci: tuple
    auc: float | None
    auc_ci: tuple | None
    auprc: float | None
    ece: float
    brier: float

    def to_json(self):
        return asdict(self)


def _pair(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1 or y.size == 0:
        raise InputError("y and yhat must be equal-length non-empty vectors")
    return y, yhat


def ccc(y, yhat) -> float | None:
    """Lin's concordance correlation with population (1/n) moments."""
    y, yhat = _pair(y, yhat)
    mx, my = y.mean(), yhat.mean()
    vx, vy = y.var(), yhat.var()
    cov = np.mean((y - mx) * (yhat - my))
    denom = vx + vy + (mx - my) ** 2
    if denom == 0:
        return None
    return float(2 * cov / denom)


def regression_metrics(y, yhat) -> RegressionReport:
    y, yhat = _pair(y, yhat)
    err = y - yhat
    mae = float(np.mean(np.abs(err)))
    rmse = float(math.sqrt(np.mean(err ** 2)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = None if ss_tot == 0 else 1.0 - float(np.sum(err ** 2)) / ss_tot
    pearson = spearman = None
    if y.size > 1 and np.ptp(y) > 0 and np.ptp(yhat) > 0:
        pearson = float(stats.pearsonr(y, yhat)[0])
        spearman = float(stats.spearmanr(y, yhat)[0])
    return RegressionReport(mae, rmse, r2, pearson, spearman, ccc(y, yhat), int(y.size))


def auc(scores_pos, scores_neg) -> float | None:
    """P(s+ > s-) with half credit for ties, via average ranks."""
    pos = np.asarray(scores_pos, dtype=float)
    neg = np.asarray(scores_neg, dtype=float)
    if pos.size == 0 or neg.size == 0:
        return None
    ranks = stats.rankdata(np.concatenate([pos, neg]))
    n_pos, n_neg = pos.size, neg.size
    u_stat = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def hanley_mcneil_ci(a: float, n_pos: int, n_neg: int, z: float = Z95) -> tuple[float, float]:
    q1 = a / (2 - a)
    q2 = 2 * a * a / (1 + a)
    var = (a * (1 - a) + (n_pos - 1) * (q1 - a * a) + (n_neg - 1) * (q2 - a * a)) / (n_pos * n_neg)
    se = math.sqrt(max(var, 0.0))
    return max(0.0, a - z * se), min(1.0, a + z * se)


def multiclass_auc(probabilities, labels) -> float | None:
    """Binary pairwise AUC for K=2, one-vs-rest macro average otherwise."""
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels, dtype=int)
    if p.shape[1] == 2:
        return auc(p[y == 1, 1], p[y == 0, 1])
    per_class = [auc(p[y == k, k], p[y != k, k]) for k in range(p.shape[1])]
    per_class = [a for a in per_class if a is not None]
    return float(np.mean(per_class)) if per_class else None


def wilson_ci(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n <= 0:
        raise InputError("Wilson interval needs n >= 1")
    p = successes / n
    denom = 1 + z * z / n
    centre = p + z * z / (2 * n)
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    # the bounds bracket p exactly; clamp away rounding at s=0 and s=n
    return min(p, max(0.0, (centre - half) / denom)), max(p, min(1.0, (centre + half) / denom))


def f1_score(preds, labels, average: str = "macro", n_classes: int | None = None) -> float:
    """Macro F1 over classes present in either vector; ``average='binary'`` scores class 1."""
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if average == "binary":
        classes = [1]
    elif n_classes is not None:
        classes = range(n_classes)
    else:
        classes = np.union1d(preds, labels)
    scores = []
    for k in classes:
        tp = np.sum((preds == k) & (labels == k))
        fp = np.sum((preds == k) & (labels != k))
        fn = np.sum((preds != k) & (labels == k))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def f1_accuracy(preds, labels, average: str = "macro") -> tuple[float, float]:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise InputError("preds and labels must be equal-length and non-empty")
    return f1_score(preds, labels, average), float(np.mean(preds == labels))


def auprc(scores, labels) -> float | None:
    """Step-wise average precision: sum of (R_k - R_{k-1}) * P_k over descending thresholds."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    tp_at = tp[ends]
    precision = tp_at / (ends + 1)
    recall = tp_at / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def bin_index(confidence, bins: int) -> np.ndarray:
    """Bin b holds (b/B, (b+1)/B]; zero falls into the first bin."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.searchsorted(edges, confidence, side="left") - 1
    return np.clip(idx, 0, bins - 1)


def ece(probabilities, labels, bins: int = 15) -> float:
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels, dtype=int)
    conf = p.max(axis=1)
    correct = (p.argmax(axis=1) == y).astype(float)
    idx = bin_index(conf, bins)
    n = len(y)
    total = 0.0
    for b in range(bins):
        sel = idx == b
        if sel.any():
            total += sel.sum() / n * abs(correct[sel].mean() - conf[sel].mean())
    return float(total)


def brier(probabilities, labels) -> float:
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels, dtype=int)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(y)), y] = 1.0
    return float(np.mean(np.sum((p - onehot) ** 2, axis=1)))


def icc21(ratings) -> float:
    """Two-way random, absolute-agreement, single-rater ICC.

    All-equal ratings have zero variance everywhere; ICC is then 1 by
    convention.
    """
    x = np.asarray(ratings, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise InputError("ICC(2,1) needs an n x k matrix with n, k >= 2")
    if not np.all(np.isfinite(x)):
        raise InputError("ICC(2,1) does not accept missing cells")
    n, k = x.shape
    grand = x.mean()
    ss_rows = k * np.sum((x.mean(axis=1) - grand) ** 2)
    ss_cols = n * np.sum((x.mean(axis=0) - grand) ** 2)
    ss_err = np.sum((x - grand) ** 2) - ss_rows - ss_cols
    ms_r = ss_rows / (n - 1)
    ms_c = ss_cols / (k - 1)
    ms_e = ss_err / ((n - 1) * (k - 1))
    denom = ms_r + (k - 1) * ms_e + k / n * (ms_c - ms_e)
    if denom == 0:
        return 1.0
    return float((ms_r - ms_e) / denom)


def empirical_coverage(y, intervals) -> float:
    y = np.asarray(y, dtype=float)
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if len(y) != len(iv):
        raise InputError("y and intervals must align")
    return float(np.mean((iv[:, 0] <= y) & (y <= iv[:, 1])))


def classification_report(probabilities, labels, average: str = "macro") -> ClassificationReport:
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels, dtype=int)
    if p.ndim != 2 or len(p) != len(y) or len(y) == 0:
        raise InputError("probabilities must be an (n, K) array aligned with labels")
    preds = p.argmax(axis=1)
    n = len(y)
    n_correct = int(np.sum(preds == y))
    f1 = f1_score(preds, y, average)
    a = multiclass_auc(p, y)
    auc_ci = None
    # Hanley-McNeil is a two-class formula; multiclass macro AUC gets no CI
    if a is not None and p.shape[1] == 2:
        n_pos = int(np.sum(y == 1))
        auc_ci = hanley_mcneil_ci(a, n_pos, n - n_pos)
    if p.shape[1] == 2:
        ap = auprc(p[:, 1], y == 1)
    else:
        per = [auprc(p[:, k], y == k) for k in range(p.shape[1])]
        per = [v for v in per if v is not None]
        ap = float(np.mean(per)) if per else None
    # F1 CI reuses the Wilson form on the F1 point estimate over n samples
    f1_ci = wilson_ci(f1 * n, n)
    return ClassificationReport(
        n=n,
        accuracy=n_correct / n,
        accuracy_ci=wilson_ci(n_correct, n),
        f1=f1,
        f1_ci=f1_ci,
        auc=a,
        auc_ci=auc_ci,
        auprc=ap,
        ece=ece(p, y),
        brier=brier(p, y),
    )


def round_floats(obj, ndigits: int = 6):
    """Recursively round floats for serialization; non-finite become ``None``."""
    if isinstance(obj, float):
        return round(obj, ndigits) if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: round_floats(v, ndigits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, ndigits) for v in obj]
    if isinstance(obj, np.generic):
        return round_floats(obj.item(), ndigits)
    return obj
