"""Pluggable patch feature extractors.

The frozen extractor stands in for a pretrained encoder: it downsamples each
patch to 32x32 grayscale and projects it with a seeded Gaussian matrix, so
identical patches always map to identical features. The trainable extractor
(see weseg.SmallConvNet) is reserved for end-to-end training.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .imaging import resize, to_grayscale

__all__ = ["RandomProjectionFeatures"]

_PATCH_SIDE = 32


class RandomProjectionFeatures(BaseEstimator, TransformerMixin):
    """Deterministic frozen patch encoder.

    Each 32x32-downsampled grayscale patch is centered and projected to
    output_dim coordinates through unit-norm Gaussian rows drawn once from the
    seed. Stateless: fit is a no-op.
    """

    kind = "frozen_random_projection"

    def __init__(self, output_dim: int = 1024, seed: int = 0):
        self.output_dim = output_dim
        self.seed = seed

    def _projection(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        matrix = rng.normal(size=(self.output_dim, _PATCH_SIDE * _PATCH_SIDE))
        return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)

    def fit(self, X=None, y=None):
        return self

    def transform(self, patches) -> np.ndarray:
        """Encode a stack of patches (n, h, w, 3) into (n, output_dim)."""
        patches = np.asarray(patches)
        if patches.ndim != 4:
            raise ValueError("expected a stack of patches with shape (n, h, w, 3)")
        projection = self._projection()
        flat = np.empty((patches.shape[0], _PATCH_SIDE * _PATCH_SIDE))
        for i, patch in enumerate(patches):
            gray = to_grayscale(patch)
            if gray.shape != (_PATCH_SIDE, _PATCH_SIDE):
                gray = resize(gray, (_PATCH_SIDE, _PATCH_SIDE))
            flat[i] = (gray - 0.5).ravel()
        return flat @ projection.T
