"""Correlation and detection metrics, plus per-slide interpretability scoring.

roc_auc uses the tie-aware rank formulation (the Mann-Whitney statistic):
over all (positive, negative) pairs it equals P(score_pos > score_neg) plus
half the ties. That makes it exact under ties and directly checkable against
pair counting.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import NamedTuple, Sequence

import numpy as np

from .validation import check_binary_vector, check_vector

__all__ = [
    "pearson",
    "spearman",
    "roc_auc",
    "roc_curve",
    "interpretability_auc",
    "InterpretabilityResult",
    "MetricReport",
    "aggregate_folds",
]


def pearson(preds, targets) -> float:
    """Product-moment correlation. Constant input is undefined: warns and
    returns NaN."""
    x = check_vector(preds, "preds", min_length=2)
    y = check_vector(targets, "targets", min_length=2)
    if x.shape != y.shape:
        raise ValueError("preds and targets must have the same length")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        warnings.warn("pearson is undefined for constant input; returning NaN", stacklevel=2)
        return float("nan")
    return float(xc @ yc) / denom


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Fractional ranks, 1-based; tied values share the mean of their ranks."""
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    new_group = np.r_[True, sorted_x[1:] != sorted_x[:-1]]
    group_id = np.cumsum(new_group) - 1
    counts = np.bincount(group_id)
    ends = np.cumsum(counts).astype(np.float64)
    starts = ends - counts + 1.0
    ranks = np.empty_like(sorted_x)
    ranks[order] = ((starts + ends) / 2.0)[group_id]
    return ranks


def spearman(preds, targets) -> float:
    """Pearson correlation of fractional (average) ranks."""
    x = check_vector(preds, "preds", min_length=2)
    y = check_vector(targets, "targets", min_length=2)
    if x.shape != y.shape:
        raise ValueError("preds and targets must have the same length")
    return pearson(_average_ranks(x), _average_ranks(y))


def roc_auc(scores, labels) -> float:
    """Tie-aware AUC: over all (pos, neg) pairs, P(s_pos > s_neg) + 0.5 P(equal)."""
    y = check_binary_vector(labels, "labels", min_length=2)
    s = check_vector(scores, "scores", min_length=2)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have the same length")
    n_pos = int(y.sum())
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative label")
    ranks = _average_ranks(s)
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Operating points for plotting: (fpr, tpr, thresholds), thresholds
    descending, with the (0, 0) and (1, 1) endpoints included."""
    y = check_binary_vector(labels, "labels", min_length=2)
    s = check_vector(scores, "scores", min_length=2)
    n_pos = int(y.sum())
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_curve needs at least one positive and one negative label")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # one operating point per distinct threshold
    distinct = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(y_sorted)[distinct]
    fp = np.cumsum(1 - y_sorted)[distinct]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s_sorted[distinct]]
    return fpr, tpr, thresholds


class InterpretabilityResult(NamedTuple):
    auc: float
    n_slides_used: int
    n_slides_excluded: int


def interpretability_auc(
    slide_scores: Sequence[np.ndarray],
    slide_labels: Sequence[np.ndarray],
    average: str = "macro",
) -> InterpretabilityResult:
    """AUC of per-instance scores (attention weights or logits) against patch
    labels.

    macro: AUC per slide, averaged over slides that contain both classes;
    single-class slides are excluded and counted. micro: all patches pooled
    into one AUC.
    """
    if len(slide_scores) != len(slide_labels):
        raise ValueError("need one label vector per score vector")
    if average not in ("macro", "micro"):
        raise ValueError(f"unknown average {average!r}")
    usable: list[tuple[np.ndarray, np.ndarray]] = []
    excluded = 0
    for scores, labels in zip(slide_scores, slide_labels):
        labels = check_binary_vector(labels, "patch labels", min_length=1)
        if labels.min() == labels.max():
            excluded += 1
            continue
        usable.append((np.asarray(scores, dtype=np.float64), labels))
    if average == "micro":
        pooled_scores = np.concatenate(
            [np.asarray(s, dtype=np.float64) for s in slide_scores]
        )
        pooled_labels = np.concatenate([np.asarray(l) for l in slide_labels])
        return InterpretabilityResult(
            auc=roc_auc(pooled_scores, pooled_labels),
            n_slides_used=len(slide_scores) - excluded,
            n_slides_excluded=excluded,
        )
    if not usable:
        raise ValueError("no slide has both patch classes; macro AUC undefined")
    aucs = [roc_auc(s, l) for s, l in usable]
    return InterpretabilityResult(
        auc=float(np.mean(aucs)),
        n_slides_used=len(usable),
        n_slides_excluded=excluded,
    )


_METRIC_FIELDS = ("pearson", "spearman", "auc", "logits_auc", "attention_auc")


@dataclass(frozen=True)
class MetricReport:
    """Metrics for one evaluation, or (via aggregate_folds) a cross-fold mean
    with ``std`` filled in and the fold reports attached."""

    pearson: float
    spearman: float
    auc: float | None = None
    logits_auc: float | None = None
    attention_auc: float | None = None
    per_fold: tuple["MetricReport", ...] = ()
    std: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {name: getattr(self, name) for name in _METRIC_FIELDS}
        if self.std:
            out["std"] = dict(self.std)
        if self.per_fold:
            out["per_fold"] = [fold.as_dict() for fold in self.per_fold]
        return out


def aggregate_folds(per_fold: Sequence[MetricReport]) -> MetricReport:
    """Unweighted mean and sample (n-1) standard deviation per metric.

    A single fold yields std 0. Metrics absent (None) in every fold stay None.
    """
    if len(per_fold) == 0:
        raise ValueError("need at least one fold")
    means: dict[str, float | None] = {}
    stds: dict[str, float] = {}
    for name in _METRIC_FIELDS:
        values = [getattr(fold, name) for fold in per_fold if getattr(fold, name) is not None]
        if not values:
            means[name] = None
            continue
        arr = np.asarray(values, dtype=np.float64)
        means[name] = float(arr.mean())
        stds[name] = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return MetricReport(
        pearson=means["pearson"],
        spearman=means["spearman"],
        auc=means["auc"],
        logits_auc=means["logits_auc"],
        attention_auc=means["attention_auc"],
        per_fold=tuple(per_fold),
        std=stds,
    )
