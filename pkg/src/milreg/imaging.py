"""Small image utilities: HSV conversion, PNG I/O, patch resizing."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "rgb_to_hsv",
    "hsv_to_rgb",
    "load_png",
    "save_png",
    "load_mask",
    "save_mask",
    "to_grayscale",
    "resize",
]

_EPS = 1e-12


def rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RGB in [0, 1] to (hue in degrees [0, 360), saturation, value)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = v - mn
    s = np.where(v > 0, delta / np.maximum(v, _EPS), 0.0)
    h = np.zeros_like(v)
    safe = np.maximum(delta, _EPS)
    chromatic = delta > 0
    r_max = chromatic & (v == r)
    g_max = chromatic & (v == g) & ~r_max
    b_max = chromatic & ~r_max & ~g_max
    h = np.where(r_max, np.mod((g - b) / safe, 6.0), h)
    h = np.where(g_max, (b - r) / safe + 2.0, h)
    h = np.where(b_max, (r - g) / safe + 4.0, h)
    return h * 60.0, s, v


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_hsv`; hue in degrees."""
    h = np.mod(np.asarray(h, dtype=np.float64), 360.0) / 60.0
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    i = np.floor(h)
    f = h - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def load_png(path: str | Path) -> np.ndarray:
    """Read a PNG as an HxWx3 uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_png(pixels: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)


def load_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 127


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """Channel mean in [0, 1] from an RGB array (uint8 or float)."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.max() > 1.0:
        arr = arr / 255.0
    return arr.mean(axis=-1)


def resize(pixels: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Deterministic bilinear resize of a 2-D (grayscale) array to (H, W)."""
    arr = np.asarray(pixels, dtype=np.float64)
    img = Image.fromarray((np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8), mode="L")
    resized = img.resize((size[1], size[0]), resample=Image.BILINEAR)
    return np.asarray(resized, dtype=np.float64) / 255.0
