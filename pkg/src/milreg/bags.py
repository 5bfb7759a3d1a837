"""Domain types for bag-of-patches supervision: slides are bags, patches are instances.

A bag carries an (N, D) feature matrix, the slide-level tumor-area target in
[0, 1], and optional per-patch ground-truth tumor fractions (synthetic/eval
only). All types are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .validation import check_feature_matrix, check_fraction

__all__ = [
    "TumorPercentage",
    "Instance",
    "Bag",
    "Prediction",
    "make_bag",
    "save_bags",
    "load_bags",
]


@dataclass(frozen=True)
class TumorPercentage:
    """Tumor area as a fraction of tissue area, always in [0, 1]."""

    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", check_fraction(self.value, "tumor percentage"))

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class Instance:
    """One patch: its grid position, feature vector, and optional ground truth."""

    patch_row: int
    patch_col: int
    features: np.ndarray
    tumor_fraction: float | None = None


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Bag:
    """One slide's instances plus its slide-level target.

    ``binary_label`` is derived: True exactly when the target is positive.
    ``tumor_fractions``, when present, holds the ground-truth tumor content of
    each patch and exists only for synthetic data and evaluation.
    """

    slide_id: str
    case_id: str
    features: np.ndarray
    patch_coords: np.ndarray
    target: TumorPercentage
    binary_label: bool = field(init=False)
    tumor_fractions: np.ndarray | None = None

    def __post_init__(self) -> None:
        feats = check_feature_matrix(self.features, "bag features")
        if feats.shape[0] < 1:
            raise ValueError("empty bag: a bag needs at least one instance")
        coords = np.asarray(self.patch_coords, dtype=np.int64)
        if coords.shape != (feats.shape[0], 2):
            raise ValueError(
                f"patch_coords must have shape ({feats.shape[0]}, 2), got {coords.shape}"
            )
        object.__setattr__(self, "features", _freeze(feats))
        object.__setattr__(self, "patch_coords", _freeze(coords))
        if not isinstance(self.target, TumorPercentage):
            object.__setattr__(self, "target", TumorPercentage(self.target))
        object.__setattr__(self, "binary_label", self.target.value > 0.0)
        if self.tumor_fractions is not None:
            tf = np.asarray(self.tumor_fractions, dtype=np.float64)
            if tf.shape != (feats.shape[0],):
                raise ValueError("tumor_fractions must be one value per instance")
            if np.any((tf < 0.0) | (tf > 1.0)) or not np.all(np.isfinite(tf)):
                raise ValueError("tumor_fractions must lie in [0, 1]")
            object.__setattr__(self, "tumor_fractions", _freeze(tf))

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def instances(self) -> tuple[Instance, ...]:
        """Instances in tiling scan order (row-major over the patch grid)."""
        fractions = self.tumor_fractions
        return tuple(
            Instance(
                patch_row=int(self.patch_coords[i, 0]),
                patch_col=int(self.patch_coords[i, 1]),
                features=self.features[i],
                tumor_fraction=None if fractions is None else float(fractions[i]),
            )
            for i in range(self.n_instances)
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Bag):
            return NotImplemented
        if self.tumor_fractions is None:
            fractions_equal = other.tumor_fractions is None
        else:
            fractions_equal = other.tumor_fractions is not None and np.array_equal(
                self.tumor_fractions, other.tumor_fractions
            )
        return (
            self.slide_id == other.slide_id
            and self.case_id == other.case_id
            and self.target.value == other.target.value
            and self.binary_label == other.binary_label
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.patch_coords, other.patch_coords)
            and fractions_equal
        )


@dataclass(frozen=True, eq=False)
class Prediction:
    """Bag-level estimate plus the per-instance scores it was pooled from."""

    bag_estimate: TumorPercentage
    instance_logits: np.ndarray
    instance_probs: np.ndarray
    attention: np.ndarray | None = None

    def __post_init__(self) -> None:
        logits = _freeze(np.asarray(self.instance_logits, dtype=np.float64))
        probs = _freeze(np.asarray(self.instance_probs, dtype=np.float64))
        if logits.shape != probs.shape or logits.ndim != 1:
            raise ValueError("instance_logits and instance_probs must be equal-length vectors")
        expected = 1.0 / (1.0 + np.exp(-logits))
        if not np.allclose(probs, expected, rtol=0.0, atol=1e-12):
            raise ValueError("instance_probs must be the elementwise sigmoid of instance_logits")
        object.__setattr__(self, "instance_logits", logits)
        object.__setattr__(self, "instance_probs", probs)
        if not isinstance(self.bag_estimate, TumorPercentage):
            object.__setattr__(self, "bag_estimate", TumorPercentage(self.bag_estimate))
        if self.attention is not None:
            att = _freeze(np.asarray(self.attention, dtype=np.float64))
            if att.shape != logits.shape:
                raise ValueError("attention must have one weight per instance")
            if np.any(att < 0.0) or abs(float(att.sum()) - 1.0) > 1e-6:
                raise ValueError("attention weights must be nonnegative and sum to 1")
            object.__setattr__(self, "attention", att)


def make_bag(
    slide_id: str,
    case_id: str,
    features: np.ndarray,
    target: float,
    patch_coords: Iterable[tuple[int, int]] | np.ndarray | None = None,
    tumor_fractions: np.ndarray | None = None,
) -> Bag:
    """Build a validated Bag; coords default to a single row-major column.

    Rejects empty instance lists, non-finite features, and out-of-range targets.
    """
    feats = check_feature_matrix(features, "bag features")
    if patch_coords is None:
        patch_coords = np.stack(
            [np.zeros(feats.shape[0], dtype=np.int64), np.arange(feats.shape[0], dtype=np.int64)],
            axis=1,
        )
    return Bag(
        slide_id=slide_id,
        case_id=case_id,
        features=feats,
        patch_coords=np.asarray(list(patch_coords) if not isinstance(patch_coords, np.ndarray) else patch_coords),
        target=TumorPercentage(target),
        tumor_fractions=tumor_fractions,
    )


def _bag_to_record(bag: Bag) -> dict:
    record = {
        "slide_id": bag.slide_id,
        "case_id": bag.case_id,
        "target": bag.target.value,
        "feature_dim": bag.feature_dim,
        "patch_coords": bag.patch_coords.tolist(),
        "features": bag.features.ravel().tolist(),
    }
    if bag.tumor_fractions is not None:
        record["tumor_fractions"] = bag.tumor_fractions.tolist()
    return record


def _bag_from_record(record: dict) -> Bag:
    dim = int(record["feature_dim"])
    features = np.asarray(record["features"], dtype=np.float64).reshape(-1, dim)
    fractions = record.get("tumor_fractions")
    return make_bag(
        slide_id=record["slide_id"],
        case_id=record["case_id"],
        features=features,
        target=float(record["target"]),
        patch_coords=np.asarray(record["patch_coords"], dtype=np.int64),
        tumor_fractions=None if fractions is None else np.asarray(fractions, dtype=np.float64),
    )


def save_bags(bags: Iterable[Bag], path: str | Path) -> int:
    """Write bags as line-delimited JSON. Floats are written as shortest
    round-tripping decimal text, so reloading reproduces them bit for bit.
    Returns the number of records written.
    """
    path = Path(path)
    count = 0
    with path.open("w") as fh:
        for bag in bags:
            fh.write(json.dumps(_bag_to_record(bag)) + "\n")
            count += 1
    return count


def iter_bags(path: str | Path) -> Iterator[Bag]:
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield _bag_from_record(json.loads(line))


def load_bags(path: str | Path) -> list[Bag]:
    """Read a cohort written by :func:`save_bags`."""
    return list(iter_bags(path))
