"""Slide image analysis: tissue segmentation, pen-marker extraction, tumor
percentage computation, and patch tiling.

The marker pipeline mirrors the molecular-diagnostics workflow: segment the
foreground tissue, detect the pen annotation and fill the enclosed area,
intersect the two, and report filled/tissue as the tumor-area percentage.
Pen-stroke pixels are excluded from the tissue denominator before the
intersection (the stroke itself is ink, not tissue).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .imaging import rgb_to_hsv
from .validation import check_mask, check_same_shape

__all__ = [
    "SlideRaster",
    "PatchGrid",
    "MarkerNotFound",
    "segment_tissue",
    "extract_marker_region",
    "marker_percentage",
    "percentage_from_marker",
    "percentage_from_mask",
    "tile_slide",
    "patch_tumor_fractions",
    "patch_labels_from_mask",
    "extract_patches",
]

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class MarkerNotFound(Exception):
    """Raised when a slide contains no pen-marker pixels."""


@dataclass(frozen=True)
class SlideRaster:
    """An RGB slide image with optional ground-truth masks."""

    pixels: np.ndarray
    pixel_spacing: float = 0.5
    tissue_mask: np.ndarray | None = None
    tumor_mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.uint8)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValueError("pixels must be an HxWx3 RGB array")
        object.__setattr__(self, "pixels", pixels)
        for name in ("tissue_mask", "tumor_mask"):
            mask = getattr(self, name)
            if mask is not None:
                mask = check_mask(mask, name)
                if mask.shape != pixels.shape[:2]:
                    raise ValueError(f"{name} must match the image dimensions")
                object.__setattr__(self, name, mask)


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping, axis-aligned foreground patches in row-major order."""

    patch_size_px: int
    coords: tuple[tuple[int, int], ...]
    origin: tuple[int, int] = (0, 0)

    def __len__(self) -> int:
        return len(self.coords)


def _as_pixels(image) -> np.ndarray:
    pixels = image.pixels if isinstance(image, SlideRaster) else np.asarray(image)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("expected an HxWx3 RGB image")
    return pixels.astype(np.float64) / 255.0


def segment_tissue(
    image,
    saturation_threshold: float = 0.08,
    luminance_threshold: float = 0.95,
    min_area: int = 64,
) -> np.ndarray:
    """Foreground tissue mask: saturated, non-near-white pixels, with
    connected components smaller than min_area dropped."""
    rgb = _as_pixels(image)
    _, s, v = rgb_to_hsv(rgb)
    mask = (s > saturation_threshold) & (v < luminance_threshold)
    if min_area > 1 and mask.any():
        labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
        sizes = np.bincount(labels.ravel())
        small = np.flatnonzero(sizes < min_area)
        mask &= ~np.isin(labels, small[small > 0])
    return mask


def _pen_pixels(image, hue_band: tuple[float, float], min_saturation: float) -> np.ndarray:
    rgb = _as_pixels(image)
    h, s, v = rgb_to_hsv(rgb)
    lo, hi = hue_band
    return (h >= lo) & (h <= hi) & (s >= min_saturation) & (v < 0.95)


def _disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy * yy + xx * xx) <= r * r


def extract_marker_region(
    image,
    hue_band: tuple[float, float] = (100.0, 260.0),
    min_saturation: float = 0.3,
    closing_radius: int = 5,
) -> np.ndarray:
    """Filled pen-marker region: hue-band detection, morphological closing
    (bridging stroke gaps up to the closing diameter), then hole filling.

    Raises MarkerNotFound when no pen pixels are detected.
    """
    pen = _pen_pixels(image, hue_band, min_saturation)
    if not pen.any():
        raise MarkerNotFound("no pen-marker pixels detected")
    # dilate -> fill -> erode instead of plain closing: thickening the stroke
    # first makes the curve topologically closed for any gap below the closing
    # diameter even when the stroke itself is thin
    structure = _disk(closing_radius)
    bridged = ndimage.binary_dilation(pen, structure=structure)
    filled = ndimage.binary_fill_holes(bridged)
    return ndimage.binary_erosion(filled, structure=structure) | pen


def marker_percentage(tissue, marker_filled) -> float:
    """|tissue AND filled-marker| / |tissue|."""
    tissue = check_mask(tissue, "tissue")
    filled = check_mask(marker_filled, "marker_filled")
    check_same_shape(tissue, filled, "tissue and marker masks")
    denom = int(tissue.sum())
    if denom == 0:
        raise ValueError("tissue mask is empty; percentage undefined")
    return float((tissue & filled).sum()) / denom


def percentage_from_marker(
    image,
    saturation_threshold: float = 0.08,
    luminance_threshold: float = 0.95,
    min_area: int = 64,
    hue_band: tuple[float, float] = (100.0, 260.0),
    min_saturation: float = 0.3,
    closing_radius: int = 5,
) -> float:
    """Full marker pipeline on one slide image: segment, extract, intersect."""
    tissue = segment_tissue(image, saturation_threshold, luminance_threshold, min_area)
    pen = _pen_pixels(image, hue_band, min_saturation)
    filled = extract_marker_region(image, hue_band, min_saturation, closing_radius)
    return marker_percentage(tissue & ~pen, filled)


def percentage_from_mask(tumor, tissue) -> float:
    """|tumor AND tissue| / |tissue| from any mask source."""
    tumor = check_mask(tumor, "tumor")
    tissue = check_mask(tissue, "tissue")
    check_same_shape(tumor, tissue, "tumor and tissue masks")
    denom = int(tissue.sum())
    if denom == 0:
        raise ValueError("tissue mask is empty; percentage undefined")
    return float((tumor & tissue).sum()) / denom


def tile_slide(tissue, patch_size_px: int = 256, min_foreground: float = 0.5) -> PatchGrid:
    """Grid cells whose tissue coverage meets min_foreground (closed
    threshold), in row-major order. Cells beyond the last full patch are
    dropped, so every patch lies inside the image."""
    tissue = check_mask(tissue, "tissue")
    if patch_size_px < 1:
        raise ValueError("patch_size_px must be >= 1")
    if not 0.0 <= min_foreground <= 1.0:
        raise ValueError("min_foreground must lie in [0, 1]")
    n_rows = tissue.shape[0] // patch_size_px
    n_cols = tissue.shape[1] // patch_size_px
    if n_rows == 0 or n_cols == 0:
        return PatchGrid(patch_size_px=patch_size_px, coords=())
    cropped = tissue[: n_rows * patch_size_px, : n_cols * patch_size_px]
    coverage = cropped.reshape(n_rows, patch_size_px, n_cols, patch_size_px).mean(axis=(1, 3))
    coords = tuple(
        (r, c) for r in range(n_rows) for c in range(n_cols) if coverage[r, c] >= min_foreground
    )
    return PatchGrid(patch_size_px=patch_size_px, coords=coords)


def patch_tumor_fractions(tumor, grid: PatchGrid) -> np.ndarray:
    """Tumor-pixel fraction of each grid patch."""
    tumor = check_mask(tumor, "tumor")
    ps = grid.patch_size_px
    fractions = np.empty(len(grid.coords))
    for i, (r, c) in enumerate(grid.coords):
        if (r + 1) * ps > tumor.shape[0] or (c + 1) * ps > tumor.shape[1]:
            raise ValueError(f"patch ({r}, {c}) lies outside the mask bounds")
        fractions[i] = tumor[r * ps : (r + 1) * ps, c * ps : (c + 1) * ps].mean()
    return fractions


def patch_labels_from_mask(tumor, grid: PatchGrid, threshold: float = 0.5) -> np.ndarray:
    """Patch label 1 where the tumor fraction strictly exceeds the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly inside (0, 1)")
    return (patch_tumor_fractions(tumor, grid) > threshold).astype(np.int64)


def extract_patches(pixels: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Stack the grid's patches from an HxWx3 image: (n_patches, ps, ps, 3)."""
    pixels = np.asarray(pixels)
    ps = grid.patch_size_px
    out = np.empty((len(grid.coords), ps, ps, 3), dtype=pixels.dtype)
    for i, (r, c) in enumerate(grid.coords):
        out[i] = pixels[r * ps : (r + 1) * ps, c * ps : (c + 1) * ps]
    return out
