"""Small grid utilities: bilinear resize and RoI downsampling to cell grids."""

from __future__ import annotations

import numpy as np


def resize_bilinear(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resample of a 2-D (or channel-last 3-D) float array
    with the half-pixel-center convention."""
    if arr.ndim == 3:
        return np.stack(
            [resize_bilinear(arr[..., k], out_hw) for k in range(arr.shape[2])],
            axis=2,
        )
    h, w = arr.shape
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return arr.astype(np.float64).copy()
    rows = (np.arange(oh, dtype=np.float64) + 0.5) * (h / oh) - 0.5
    cols = (np.arange(ow, dtype=np.float64) + 0.5) * (w / ow) - 0.5
    r0 = np.clip(np.floor(rows), 0, h - 1).astype(np.int64)
    c0 = np.clip(np.floor(cols), 0, w - 1).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = np.clip(rows - r0, 0.0, 1.0)[:, None]
    fc = np.clip(cols - c0, 0.0, 1.0)[None, :]
    a = arr[np.ix_(r0, c0)]
    b = arr[np.ix_(r0, c1)]
    c = arr[np.ix_(r1, c0)]
    d = arr[np.ix_(r1, c1)]
    top = a * (1 - fc) + b * fc
    bot = c * (1 - fc) + d * fc
    return top * (1 - fr) + bot * fr


def cell_slices(length: int, cells: int) -> list[slice]:
    """Partition [0, length) into `cells` contiguous spans (proportional)."""
    edges = [(i * length) // cells for i in range(cells + 1)]
    return [slice(edges[i], max(edges[i + 1], edges[i] + 1)) for i in range(cells)]


def downsample_to_cells(arr: np.ndarray, grid_hw: tuple[int, int], reduce: str = "mean") -> np.ndarray:
    """Reduce a 2-D array onto a coarse cell grid by per-cell mean or max."""
    gh, gw = grid_hw
    out = np.empty((gh, gw), dtype=np.float64)
    row_sl = cell_slices(arr.shape[0], gh)
    col_sl = cell_slices(arr.shape[1], gw)
    fn = np.mean if reduce == "mean" else np.max
    for i, rs in enumerate(row_sl):
        for j, cs in enumerate(col_sl):
            out[i, j] = fn(arr[rs, cs])
    return out
