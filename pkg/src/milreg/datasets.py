"""Fully-labeled synthetic cohorts: feature-space bags and raster slides.

The feature model is two isotropic Gaussians per class: tumor instances get a
mean offset of `separation` (in per-coordinate standard deviations) on the
first informative coordinates, the rest is pure noise. Bag targets are exact
by construction: exactly round(target * N) instances are tumorous and the
stored target is that realized fraction.

Raster slides are unions of chained random ellipses ("tissue") on a white
background, with a tumor region grown inside the tissue to an exact pixel
count and, optionally, a green pen stroke traced along the tumor boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import ndimage

from .bags import Bag, make_bag
from .preprocessing import EIGHT_CONNECTED, SlideRaster
from .validation import check_fraction, round_half_up

__all__ = [
    "PercentageDistribution",
    "CohortSpec",
    "RasterCohortSpec",
    "generate_bag",
    "generate_cohort",
    "generate_slide_raster",
    "generate_raster_cohort",
    "BACKGROUND_COLOR",
    "TISSUE_COLOR",
    "TUMOR_COLOR",
    "MARKER_COLOR",
]

BACKGROUND_COLOR = (255, 255, 255)
TISSUE_COLOR = (231, 181, 192)  # pale pink, hue ~347
TUMOR_COLOR = (140, 92, 158)  # muted purple, hue ~284
MARKER_COLOR = (40, 160, 80)  # green pen, hue ~140


@dataclass(frozen=True)
class PercentageDistribution:
    """Positive-target distribution: uniform(lo, hi) or skewed_low(scale).

    skewed_low is an exponential truncated to (0, 1]; small scales reproduce
    the biopsy-style shape where the mean far exceeds the median.
    """

    kind: str
    lo: float = 0.01
    hi: float = 1.0
    scale: float = 0.05

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "skewed_low"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "uniform":
            check_fraction(self.lo, "lo")
            check_fraction(self.hi, "hi")
            if not self.lo < self.hi:
                raise ValueError("uniform distribution needs lo < hi")
        elif self.scale <= 0:
            raise ValueError("skewed_low scale must be positive")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, size=size)
        # inverse-CDF draw from Exp(scale) truncated to (0, 1]
        u = rng.uniform(0.0, 1.0, size=size)
        mass = 1.0 - np.exp(-1.0 / self.scale)
        return -self.scale * np.log1p(-u * mass)


@dataclass(frozen=True)
class CohortSpec:
    """Recipe for a feature-space cohort; a pure function of its seed."""

    n_slides: int
    negatives_fraction: float = 0.0
    distribution: PercentageDistribution = field(
        default_factory=lambda: PercentageDistribution("uniform", 0.05, 0.95)
    )
    instances_per_bag: tuple[int, int] = (30, 60)
    feature_dim: int = 1024
    separation: float = 2.0
    informative_dims: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_slides < 1:
            raise ValueError("n_slides must be >= 1")
        check_fraction(self.negatives_fraction, "negatives_fraction")
        n_min, n_max = self.instances_per_bag
        if not 1 <= n_min <= n_max:
            raise ValueError("instances_per_bag must satisfy 1 <= n_min <= n_max")
        if self.separation < 0:
            raise ValueError("separation must be >= 0")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")

    @property
    def n_informative(self) -> int:
        if self.informative_dims is not None:
            return min(self.informative_dims, self.feature_dim)
        return min(8, self.feature_dim)


def generate_bag(
    spec: CohortSpec,
    target: float,
    rng: np.random.Generator,
    slide_id: str = "slide_0000",
    case_id: str = "case_0000",
) -> Bag:
    """One bag with exactly round(target * N) tumor instances.

    The stored target is the realized fraction m/N, so the label is exact by
    construction; per-instance tumor_fraction flags carry the ground truth.
    """
    target = check_fraction(target, "target")
    n_min, n_max = spec.instances_per_bag
    n = int(rng.integers(n_min, n_max + 1))
    m = min(round_half_up(target * n), n)
    flags = np.zeros(n)
    if m > 0:
        flags[rng.choice(n, size=m, replace=False)] = 1.0
    features = rng.normal(0.0, 1.0, size=(n, spec.feature_dim))
    features[flags == 1.0, : spec.n_informative] += spec.separation
    n_cols = int(np.ceil(np.sqrt(n)))
    coords = np.stack([np.arange(n) // n_cols, np.arange(n) % n_cols], axis=1)
    return make_bag(
        slide_id=slide_id,
        case_id=case_id,
        features=features,
        target=m / n,
        patch_coords=coords,
        tumor_fractions=flags,
    )


def generate_cohort(spec: CohortSpec) -> list[Bag]:
    """Deterministic cohort: exactly round(negatives_fraction * n_slides) bags
    have target 0, the rest draw positive targets from the configured
    distribution. Each bag owns an RNG derived from (seed, index), so bags
    could be generated in any order with identical results."""
    master = np.random.default_rng(spec.seed)
    n_neg = round_half_up(spec.negatives_fraction * spec.n_slides)
    targets = np.concatenate(
        [np.zeros(n_neg), spec.distribution.sample(master, spec.n_slides - n_neg)]
    )
    targets = targets[master.permutation(spec.n_slides)]
    return [
        generate_bag(
            spec,
            float(targets[i]),
            np.random.default_rng([spec.seed, i]),
            slide_id=f"slide_{i:04d}",
            case_id=f"case_{i:04d}",
        )
        for i in range(spec.n_slides)
    ]


def _ellipse_mask(shape: tuple[int, int], center, axes, angle: float) -> np.ndarray:
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    dy = yy - center[0]
    dx = xx - center[1]
    cos, sin = np.cos(angle), np.sin(angle)
    u = dx * cos + dy * sin
    w = -dx * sin + dy * cos
    return (u / axes[1]) ** 2 + (w / axes[0]) ** 2 <= 1.0


def _grow_tumor(tissue: np.ndarray, target_px: int, rng: np.random.Generator) -> np.ndarray:
    """Grow a connected region inside the tissue to exactly target_px pixels."""
    labels, n_comp = ndimage.label(tissue, structure=EIGHT_CONNECTED)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    total = int(tissue.sum())
    largest = int(sizes.argmax())
    if sizes[largest] < target_px:
        achieved = sizes[largest] / total
        raise ValueError(
            f"requested tumor fraction is unachievable with this tissue geometry; "
            f"largest connected region allows at most {achieved:.4f}"
        )
    component = labels == largest
    ys, xs = np.nonzero(component)
    cy, cx = ys.mean(), xs.mean()
    seed_idx = int(np.argmin((ys - cy) ** 2 + (xs - cx) ** 2))
    tumor = np.zeros_like(tissue)
    tumor[ys[seed_idx], xs[seed_idx]] = True
    count = 1
    while count < target_px:
        ring = ndimage.binary_dilation(tumor, structure=EIGHT_CONNECTED) & component & ~tumor
        n_ring = int(ring.sum())
        if n_ring == 0:  # pragma: no cover - component size was checked above
            raise ValueError("tumor growth saturated before reaching the target")
        if count + n_ring <= target_px:
            tumor |= ring
            count += n_ring
        else:
            ry, rx = np.nonzero(ring)
            dist = (ry - ys[seed_idx]) ** 2 + (rx - xs[seed_idx]) ** 2
            order = np.lexsort((rx, ry, dist))
            take = target_px - count
            tumor[ry[order[:take]], rx[order[:take]]] = True
            count = target_px
    return tumor


def generate_slide_raster(
    width: int,
    height: int,
    tissue_blobs: int,
    tumor_fraction: float,
    marker: bool,
    rng: np.random.Generator,
) -> SlideRaster:
    """Synthetic slide: white background, chained tissue ellipses, a tumor
    region occupying exactly round(tumor_fraction * tissue) pixels, and an
    optional closed pen stroke along the tumor boundary.

    Ellipse centers after the first are sampled inside the existing tissue, so
    the tissue stays connected and every fraction up to 1 is achievable.
    """
    tumor_fraction = check_fraction(tumor_fraction, "tumor_fraction")
    if tissue_blobs < 1:
        raise ValueError("need at least one tissue blob")
    if marker and tumor_fraction == 0.0:
        raise ValueError("a pen marker needs a tumor region to enclose")
    shape = (height, width)
    span = min(height, width)
    tissue = np.zeros(shape, dtype=bool)
    for i in range(tissue_blobs):
        if i == 0:
            center = (
                height / 2 + rng.uniform(-0.1, 0.1) * height,
                width / 2 + rng.uniform(-0.1, 0.1) * width,
            )
        else:
            ys, xs = np.nonzero(tissue)
            j = int(rng.integers(len(ys)))
            center = (float(ys[j]), float(xs[j]))
        axes = rng.uniform(0.10, 0.18, size=2) * span
        tissue |= _ellipse_mask(shape, center, axes, rng.uniform(0.0, np.pi))

    target_px = round_half_up(tumor_fraction * int(tissue.sum()))
    tumor = (
        _grow_tumor(tissue, target_px, rng) if target_px > 0 else np.zeros(shape, dtype=bool)
    )

    pixels = np.full((height, width, 3), BACKGROUND_COLOR, dtype=np.uint8)
    pixels[tissue] = TISSUE_COLOR
    pixels[tumor] = TUMOR_COLOR
    if marker:
        # thin pen stroke just outside the tumor edge, as a pathologist would
        # circle the lesion; it never overwrites tumor pixels
        stroke = ndimage.binary_dilation(tumor, structure=EIGHT_CONNECTED) & ~tumor
        pixels[stroke] = MARKER_COLOR
    return SlideRaster(pixels=pixels, tissue_mask=tissue, tumor_mask=tumor)


@dataclass(frozen=True)
class RasterCohortSpec:
    """Recipe for a raster cohort (slide PNGs plus ground-truth masks)."""

    n_slides: int
    width: int = 384
    height: int = 384
    tissue_blobs: int = 4
    negatives_fraction: float = 0.0
    distribution: PercentageDistribution = field(
        default_factory=lambda: PercentageDistribution("uniform", 0.05, 0.6)
    )
    marker: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_slides < 1:
            raise ValueError("n_slides must be >= 1")
        check_fraction(self.negatives_fraction, "negatives_fraction")


def generate_raster_cohort(spec: RasterCohortSpec) -> list[tuple[str, str, SlideRaster]]:
    """Deterministic list of (slide_id, case_id, raster). Negative slides get
    no tumor and no marker."""
    master = np.random.default_rng(spec.seed)
    n_neg = round_half_up(spec.negatives_fraction * spec.n_slides)
    targets = np.concatenate(
        [np.zeros(n_neg), spec.distribution.sample(master, spec.n_slides - n_neg)]
    )
    targets = targets[master.permutation(spec.n_slides)]
    slides = []
    for i in range(spec.n_slides):
        raster = generate_slide_raster(
            spec.width,
            spec.height,
            spec.tissue_blobs,
            float(targets[i]),
            marker=spec.marker and targets[i] > 0,
            rng=np.random.default_rng([spec.seed, i]),
        )
        slides.append((f"slide_{i:04d}", f"case_{i:04d}", raster))
    return slides
