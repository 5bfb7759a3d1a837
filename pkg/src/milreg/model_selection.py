"""Cross-validation folds with case grouping and stratification, early
stopping, and the WeSEG decision-threshold search.

Folds are built case-first: every slide of a case lands in the same
membership set, test sets partition the cases across the k folds, and both
the test assignment and the train/val split are stratified on quantile bins
of the per-case mean target. All randomness comes from the single seed, so a
FoldPlan is a pure function of its inputs.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .metrics import pearson
from .pooling import weseg_percentage
from .validation import round_half_up

__all__ = [
    "CaseRecord",
    "FoldMembership",
    "FoldPlan",
    "make_cv_folds",
    "optimize_threshold",
    "early_stop_check",
]


@dataclass(frozen=True)
class CaseRecord:
    """One patient: its slides and the mean target across them."""

    case_id: str
    slide_ids: tuple[str, ...]
    target: float

    @property
    def n_slides(self) -> int:
        return len(self.slide_ids)


@dataclass(frozen=True)
class FoldMembership:
    test_case_ids: tuple[str, ...]
    train_case_ids: tuple[str, ...]
    val_case_ids: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    k: int
    folds: tuple[FoldMembership, ...]
    seed: int
    strata_bins: int

    def to_json(self) -> str:
        """Canonical JSON; identical inputs yield identical bytes."""
        payload = {
            "k": self.k,
            "seed": self.seed,
            "strata_bins": self.strata_bins,
            "folds": [
                {
                    "test": list(fold.test_case_ids),
                    "train": list(fold.train_case_ids),
                    "val": list(fold.val_case_ids),
                }
                for fold in self.folds
            ],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        payload = json.loads(text)
        return cls(
            k=payload["k"],
            seed=payload["seed"],
            strata_bins=payload["strata_bins"],
            folds=tuple(
                FoldMembership(
                    test_case_ids=tuple(fold["test"]),
                    train_case_ids=tuple(fold["train"]),
                    val_case_ids=tuple(fold["val"]),
                )
                for fold in payload["folds"]
            ),
        )


def _as_case_records(cases: Iterable) -> list[CaseRecord]:
    records = []
    for case in cases:
        if isinstance(case, CaseRecord):
            records.append(case)
        else:
            case_id, slide_ids, target = case
            records.append(
                CaseRecord(case_id=str(case_id), slide_ids=tuple(slide_ids), target=float(target))
            )
    ids = [r.case_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("case ids must be unique")
    return records


def _strata(records: list[CaseRecord], n_bins: int) -> list[list[CaseRecord]]:
    """Quantile bins: sort by target and chunk into n_bins near-equal groups."""
    ordered = sorted(records, key=lambda r: (r.target, r.case_id))
    n = len(ordered)
    n_bins = min(n_bins, n)
    edges = [round(i * n / n_bins) for i in range(n_bins + 1)]
    return [ordered[edges[i] : edges[i + 1]] for i in range(n_bins)]


def _largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Integer apportionment of `total` proportional to weights."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.sum() == 0:
        return [0] * len(weights)
    shares = total * weights / weights.sum()
    quotas = np.floor(shares).astype(int)
    remainder = total - quotas.sum()
    order = np.argsort(-(shares - quotas), kind="stable")
    for i in order[:remainder]:
        quotas[i] += 1
    return quotas.tolist()


def make_cv_folds(
    cases: Iterable,
    k: int = 5,
    seed: int = 0,
    strata_bins: int = 4,
    val_fraction: float = 0.15,
) -> FoldPlan:
    """Build a k-fold plan over cases.

    Per fold: ~1/k of the slides form the test set (selected by case), and the
    remaining cases split into train and validation targeting
    (1 - val_fraction)/val_fraction. Test sets are pairwise disjoint and
    together cover every case.
    """
    records = _as_case_records(cases)
    if len(records) < k:
        raise ValueError(f"need at least k={k} cases, got {len(records)}")
    rng = np.random.default_rng(seed)
    bins = _strata(records, strata_bins)

    # Assign each case to the currently lightest test bucket, bin by bin, so
    # buckets stay balanced in slide count while respecting the strata.
    buckets: list[list[CaseRecord]] = [[] for _ in range(k)]
    loads = np.zeros(k, dtype=np.int64)
    for bin_cases in bins:
        order = rng.permutation(len(bin_cases))
        for idx in order:
            case = bin_cases[idx]
            target_bucket = int(np.argmin(loads))
            buckets[target_bucket].append(case)
            loads[target_bucket] += case.n_slides

    folds = []
    for f in range(k):
        test_ids = {case.case_id for case in buckets[f]}
        remaining_bins = [[case for case in bin_cases if case.case_id not in test_ids] for bin_cases in bins]
        remaining_slides = sum(case.n_slides for bin_cases in remaining_bins for case in bin_cases)
        n_val_slides = round_half_up(val_fraction * remaining_slides)
        quotas = _largest_remainder(
            n_val_slides,
            [sum(case.n_slides for case in bin_cases) for bin_cases in remaining_bins],
        )
        val_ids: set[str] = set()
        for bin_cases, quota in zip(remaining_bins, quotas):
            order = rng.permutation(len(bin_cases))
            taken = 0
            for idx in order:
                if taken >= quota:
                    break
                val_ids.add(bin_cases[idx].case_id)
                taken += bin_cases[idx].n_slides
        train_ids = {
            case.case_id for bin_cases in remaining_bins for case in bin_cases
        } - val_ids
        folds.append(
            FoldMembership(
                test_case_ids=tuple(sorted(test_ids)),
                train_case_ids=tuple(sorted(train_ids)),
                val_case_ids=tuple(sorted(val_ids)),
            )
        )
    return FoldPlan(k=k, folds=tuple(folds), seed=seed, strata_bins=strata_bins)


def optimize_threshold(probs_per_slide: Sequence, targets: Sequence[float], grid_step: float = 0.05) -> float:
    """Grid threshold in (0, 1) maximizing Pearson correlation between
    thresholded percentages and targets; ties resolved toward 0.5.

    Degenerate validation data (constant targets, or too few slides for a
    correlation) returns 0.5 with a warning.
    """
    if len(probs_per_slide) == 0:
        raise ValueError("need at least one validation slide")
    if len(probs_per_slide) != len(targets):
        raise ValueError("need one target per slide")
    targets = np.asarray(targets, dtype=np.float64)
    n_steps = int(round(1.0 / grid_step))
    candidates = [round(i * grid_step, 10) for i in range(1, n_steps)]
    if targets.size < 2 or targets.min() == targets.max():
        warnings.warn(
            "correlation undefined on this validation set; falling back to threshold 0.5",
            stacklevel=2,
        )
        return 0.5
    best_score = -np.inf
    scored: list[tuple[float, float]] = []
    for threshold in candidates:
        estimates = np.asarray([weseg_percentage(p, threshold) for p in probs_per_slide])
        if estimates.min() == estimates.max():
            continue
        score = pearson(estimates, targets)
        scored.append((threshold, score))
        best_score = max(best_score, score)
    if not scored or not np.isfinite(best_score):
        warnings.warn(
            "no threshold produced a defined correlation; falling back to 0.5",
            stacklevel=2,
        )
        return 0.5
    tied = [t for t, s in scored if s >= best_score - 1e-12]
    return min(tied, key=lambda t: (abs(t - 0.5), t))


def early_stop_check(history: Sequence[float], patience: int, min_epochs: int) -> bool:
    """True once the best validation loss is `patience` epochs stale.

    Improvement means dropping below the running best by more than 1e-6.
    Patience is counted from the later of the best epoch and min_epochs, so a
    flat history with min_epochs=50, patience=20 stops at epoch 70 and nothing
    stops before min_epochs.
    """
    if len(history) == 0:
        raise ValueError("history must contain at least one epoch")
    best = history[0]
    best_epoch = 1
    for epoch, value in enumerate(history[1:], start=2):
        if value < best - 1e-6:
            best = value
            best_epoch = epoch
    return len(history) - max(best_epoch, min_epochs) >= patience
