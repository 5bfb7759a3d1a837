"""Target-space transforms: root amplification, uniform label noise, binarization.

Amplification maps y to y**(1/n) (default n=5), expanding the low end of the
percentage scale so small lesions separate from tumor-free slides. Noise adds
a uniform draw from [-level, +level] and clamps back into [0, 1]; it is meant
for training targets only. When both are enabled the order is: noise first on
the raw percentage, clamp, then amplify.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AmplifySpec",
    "NoiseSpec",
    "amplify",
    "deamplify",
    "inject_noise",
    "binarize",
]


@dataclass(frozen=True)
class AmplifySpec:
    """Root degree of the amplification transform; n=1 is the identity."""

    root_degree: int = 5

    def __post_init__(self) -> None:
        if int(self.root_degree) < 1:
            raise ValueError("root_degree must be >= 1")
        object.__setattr__(self, "root_degree", int(self.root_degree))


@dataclass(frozen=True)
class NoiseSpec:
    """Half-width of the uniform noise interval and the seed that drives it."""

    level: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= float(self.level) < 1.0:
            raise ValueError("noise level must lie in [0, 1)")
        object.__setattr__(self, "level", float(self.level))


def _as_fractions(y, name: str):
    arr = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any((arr < 0.0) | (arr > 1.0)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def amplify(y, spec: AmplifySpec | int = AmplifySpec()):
    """Return y**(1/n); strictly monotone, maps [0, 1] onto [0, 1].

    Accepts a scalar or an array and returns the same shape.
    """
    n = spec.root_degree if isinstance(spec, AmplifySpec) else int(AmplifySpec(spec).root_degree)
    arr = _as_fractions(y, "y")
    out = np.power(arr, 1.0 / n)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.isscalar(y) or np.ndim(y) == 0 else out


def deamplify(yhat, spec: AmplifySpec | int = AmplifySpec()):
    """Inverse of :func:`amplify`: returns yhat**n."""
    n = spec.root_degree if isinstance(spec, AmplifySpec) else int(AmplifySpec(spec).root_degree)
    arr = _as_fractions(yhat, "yhat")
    out = np.power(arr, n)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.isscalar(yhat) or np.ndim(yhat) == 0 else out


def inject_noise(y, spec: NoiseSpec, rng: np.random.Generator | None = None):
    """Perturb targets with u ~ Uniform(-level, +level) and clamp into [0, 1].

    With level 0 this is the identity. Pass an explicit generator to make
    parallel callers reproducible; otherwise one is derived from spec.seed.
    """
    arr = _as_fractions(y, "y")
    if spec.level == 0.0:
        return float(arr) if np.ndim(y) == 0 else arr.copy()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    noise = rng.uniform(-spec.level, spec.level, size=arr.shape)
    out = np.clip(arr + noise, 0.0, 1.0)
    return float(out) if np.ndim(y) == 0 else out


def binarize(y) -> bool | np.ndarray:
    """Tumor present iff the percentage is strictly positive."""
    arr = _as_fractions(y, "y")
    out = arr > 0.0
    return bool(out) if np.ndim(y) == 0 else out
