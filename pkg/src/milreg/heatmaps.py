"""Patch-grid heatmaps of per-instance scores (attention weights or logits)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = ["Heatmap", "build_heatmap", "save_heatmap"]

KINDS = ("attention", "logits")


@dataclass(frozen=True)
class Heatmap:
    """2-D grid of min-max normalized scores; NaN marks cells with no patch."""

    grid: np.ndarray
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")


def _grid_coords(grid) -> list[tuple[int, int]]:
    coords = grid.coords if hasattr(grid, "coords") else grid
    return [(int(r), int(c)) for r, c in coords]


def build_heatmap(grid, values, kind: str, coords: Sequence[tuple[int, int]] | None = None) -> Heatmap:
    """Place values on the patch grid, min-max normalized into [0, 1].

    Values are taken in the grid's scan order unless explicit ``coords`` are
    supplied (each must be a cell of the grid). Constant input normalizes to a
    uniform 0.5 map. Cells without a patch are NaN.
    """
    grid_coords = _grid_coords(grid)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("values must be a 1-D vector")
    if coords is None:
        if values.shape[0] != len(grid_coords):
            raise ValueError(
                f"got {values.shape[0]} values for {len(grid_coords)} grid cells; "
                "pass explicit coords for out-of-order values"
            )
        placed = list(zip(grid_coords, values))
    else:
        coords = [(int(r), int(c)) for r, c in coords]
        if len(coords) != values.shape[0]:
            raise ValueError("coords and values must have the same length")
        cells = set(grid_coords)
        for rc in coords:
            if rc not in cells:
                raise ValueError(f"coordinate {rc} is not a cell of the grid")
        placed = list(zip(coords, values))

    lo = values.min()
    hi = values.max()
    if hi > lo:
        normalized = {rc: (v - lo) / (hi - lo) for rc, v in placed}
    else:
        normalized = {rc: 0.5 for rc, _ in placed}

    n_rows = max(r for r, _ in grid_coords) + 1
    n_cols = max(c for _, c in grid_coords) + 1
    out = np.full((n_rows, n_cols), np.nan)
    for (r, c), v in normalized.items():
        out[r, c] = v
    return Heatmap(grid=out, kind=kind)


def save_heatmap(heatmap: Heatmap, png_path: str | Path, json_path: str | Path | None = None) -> None:
    """Render to PNG (viridis, transparent where no patch) and dump raw values
    as JSON next to it."""
    from matplotlib import cm
    from PIL import Image

    grid = heatmap.grid
    colored = cm.get_cmap("viridis")(np.nan_to_num(grid, nan=0.0))
    rgba = (colored * 255).astype(np.uint8)
    rgba[..., 3] = np.where(np.isnan(grid), 0, 255)
    Image.fromarray(rgba, mode="RGBA").save(png_path)
    if json_path is not None:
        payload = {
            "kind": heatmap.kind,
            "shape": list(grid.shape),
            "values": [[None if np.isnan(v) else v for v in row] for row in grid.tolist()],
        }
        Path(json_path).write_text(json.dumps(payload))
