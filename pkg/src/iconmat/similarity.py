"""Similarity guidance: prompted reference cells vs target feature cells.

Two signals are combined. Inter-similarity matches in-context query
vectors (feature cells under the reference RoI) against every target
cell. Intra-similarity propagates that match through the target's own
self-attention, one map per attention scale. The fused map is the
min-max normalized mean at the finest scale.

All grids are row-major; a flat index i maps to cell (i // gw, i % gw).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend.base import AttentionScale, FeatureBundle, FeatureScale
from .errors import DimensionError, EmptyQueryError, ValidationError
from .gridops import resize_bilinear


@dataclass(frozen=True)
class InContextQuery:
    """Stack of query vectors, one per prompted reference cell.

    source_cells, when known, gives each row's (row, col) on the
    source grid; scale_id names that grid.
    """

    vectors: np.ndarray  # (K, d)
    scale_id: int | None = None
    source_cells: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"query must be a non-empty (K, d) stack, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("query vectors must be finite")
        if np.any(~v.any(axis=1)):
            raise ValidationError("query contains an all-zero row")
        if self.source_cells is not None and len(self.source_cells) != v.shape[0]:
            raise ValidationError("one source cell per query row")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class GuidanceSet:
    """Guidance for one target: inter map, per-scale maps, fused map.

    per_scale follows the bundle's attention order (coarsest first);
    fused lives on the finest attention grid.
    """

    inter: np.ndarray
    per_scale: tuple
    fused: np.ndarray
    scale_ids: tuple

    def scale_map(self, scale_id: int) -> np.ndarray:
        for sid, m in zip(self.scale_ids, self.per_scale):
            if sid == scale_id:
                return m
        raise KeyError(f"no guidance map for scale {scale_id}")


def downsample_roi(mask: np.ndarray, grid_hw) -> np.ndarray:
    """Project a pixel RoI mask onto a cell grid.

    A cell is set when at least half its pixels are inside the RoI.
    Thin prompts (points, scribbles) can miss that bar in every cell,
    so if nothing survives we fall back to any-coverage pooling.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise DimensionError(f"RoI mask must be 2D, got shape {mask.shape}")
    gh, gw = grid_hw
    from .gridops import cell_slices

    rows = cell_slices(mask.shape[0], gh)
    cols = cell_slices(mask.shape[1], gw)
    frac = np.zeros((gh, gw))
    hit = np.zeros((gh, gw))
    binary = mask > 0.5
    for i, rs in enumerate(rows):
        for j, cs in enumerate(cols):
            block = binary[rs, cs]
            frac[i, j] = block.mean() if block.size else 0.0
            hit[i, j] = 1.0 if block.any() else 0.0
    grid = (frac >= 0.5).astype(np.float64)
    if not grid.any():
        grid = hit
    return grid


def query_from_grid(feature: FeatureScale, roi_grid: np.ndarray) -> InContextQuery:
    """Gather feature vectors at set RoI cells, row-major.

    Cells whose feature vector is exactly zero carry no signal and are
    dropped.
    """
    roi_grid = np.asarray(roi_grid)
    h, w, _ = feature.tensor.shape
    if roi_grid.shape != (h, w):
        raise DimensionError(
            f"RoI grid {roi_grid.shape} does not match feature grid {(h, w)}"
        )
    cells = [
        (r, c)
        for r, c in np.argwhere(roi_grid > 0)
        if feature.tensor[r, c].any()
    ]
    if not cells:
        raise EmptyQueryError("RoI selects no usable feature cells")
    vectors = np.stack([feature.tensor[r, c] for r, c in cells])
    return InContextQuery(
        vectors=vectors,
        scale_id=feature.scale_id,
        source_cells=tuple((int(r), int(c)) for r, c in cells),
    )


def build_query(bundle: FeatureBundle, roi_mask: np.ndarray) -> InContextQuery:
    """Pixel RoI mask on the reference image -> in-context query."""
    feature = bundle.inter_feature
    grid = downsample_roi(roi_mask, feature.tensor.shape[:2])
    if not grid.any():
        raise EmptyQueryError("RoI mask covers no grid cell")
    return query_from_grid(feature, grid)


def _ordered_sum(values: np.ndarray) -> float:
    # Summation order must not depend on cell order, or permuting the
    # target cells would perturb the softmax denominator in the last ulp.
    return float(np.sum(np.sort(values, kind="stable")))


def inter_similarity(query: InContextQuery, target) -> np.ndarray:
    """Mean softmax match of each query vector against all target cells.

    `target` is a FeatureBundle (its inter-feature scale is used) or a
    bare FeatureScale. Returns a (gh, gw) map that sums to 1. Permuting
    target cells permutes the output exactly.
    """
    feature = target.inter_feature if isinstance(target, FeatureBundle) else target
    h, w, d = feature.tensor.shape
    if query.dim != d:
        raise DimensionError(
            f"query dim {query.dim} does not match feature dim {d}"
        )
    flat = feature.tensor.reshape(h * w, d)
    scale = 1.0 / np.sqrt(d)
    out = np.zeros(h * w)
    for k in range(query.count):
        # einsum reduces every logit with the same straight loop, so a
        # cell's value depends only on its own feature row. BLAS matvec
        # and matmul kernels instead pick blocking from operand shapes,
        # which perturbs last-ulp logits when cells are permuted or
        # queries are batched.
        logits = np.einsum("nd,d->n", flat, query.vectors[k]) * scale
        row = logits - logits.max()
        exps = np.exp(row)
        out += exps / _ordered_sum(exps)
    out /= query.count
    return out.reshape(h, w)


def _resize_renormalize(sim: np.ndarray, grid_hw) -> np.ndarray:
    resized = resize_bilinear(sim, grid_hw)
    resized = np.clip(resized, 0.0, None)
    total = resized.sum()
    if total <= 0.0:
        return np.full(grid_hw, 1.0 / (grid_hw[0] * grid_hw[1]))
    return resized / total


def intra_similarity(sim: np.ndarray, target):
    """Propagate an inter-similarity map through self-attention.

    The map is resized to each attention grid, renormalized to unit
    sum, and used to weight attention rows: out = A^T s_hat. Given a
    FeatureBundle this returns one map per attention scale (coarsest
    first); given a single AttentionScale, just that map.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2:
        raise DimensionError(f"similarity map must be 2D, got {sim.shape}")
    if isinstance(target, FeatureBundle):
        return tuple(_propagate(sim, a) for a in target.attention)
    return _propagate(sim, target)


def _propagate(sim: np.ndarray, attention: AttentionScale) -> np.ndarray:
    gh, gw = attention.grid_hw
    s_hat = _resize_renormalize(sim, (gh, gw)).reshape(-1)
    propagated = attention.matrix.T @ s_hat
    return propagated.reshape(gh, gw)


def fuse_guidance(maps, target_hw) -> np.ndarray:
    """Mean of resized maps, min-max normalized to [0, 1].

    A constant mean (no contrast anywhere) normalizes to all zeros.
    """
    if not maps:
        raise ValidationError("need at least one guidance map to fuse")
    acc = np.zeros(tuple(target_hw))
    for m in maps:
        acc += resize_bilinear(np.asarray(m, dtype=np.float64), target_hw)
    acc /= len(maps)
    lo, hi = acc.min(), acc.max()
    if hi - lo <= 0.0:
        return np.zeros(tuple(target_hw))
    return (acc - lo) / (hi - lo)


def compute_guidance(
    query: InContextQuery, bundle: FeatureBundle, use_intra: bool = True
) -> GuidanceSet:
    """Full guidance chain for one target bundle."""
    inter = inter_similarity(query, bundle.inter_feature)
    per_scale = []
    for attn in bundle.attention:
        if use_intra:
            per_scale.append(_propagate(inter, attn))
        else:
            per_scale.append(_resize_renormalize(inter, attn.grid_hw))
    finest_hw = bundle.attention[-1].grid_hw
    fused = fuse_guidance(per_scale, finest_hw)
    return GuidanceSet(
        inter=inter,
        per_scale=tuple(per_scale),
        fused=fused,
        scale_ids=tuple(a.scale_id for a in bundle.attention),
    )


def extend_prompt(roi_grid: np.ndarray, source, m: int) -> np.ndarray:
    """Grow a cell RoI along self-attention: per set cell, add its m
    strongest attention targets that are not already in the RoI.

    `source` is the reference FeatureBundle (attention at the inter
    scale is used) or a bare AttentionScale. m = 0 returns the input
    unchanged.
    """
    attention = source.attn(source.inter_scale_id) if isinstance(source, FeatureBundle) else source
    roi_grid = np.asarray(roi_grid, dtype=np.float64)
    if m < 0:
        raise ValidationError(f"extension size must be >= 0, got {m}")
    gh, gw = attention.grid_hw
    if roi_grid.shape != (gh, gw):
        raise DimensionError(
            f"RoI grid {roi_grid.shape} does not match attention grid {(gh, gw)}"
        )
    if m == 0:
        return roi_grid.copy()
    base = roi_grid.reshape(-1) > 0
    extended = base.copy()
    for idx in np.flatnonzero(base):
        row = attention.matrix[idx].copy()
        row[base] = -np.inf  # never re-add prompted cells
        order = np.argsort(-row, kind="stable")
        take = min(m, int(np.isfinite(row).sum()))
        extended[order[:take]] = True
    return extended.astype(np.float64).reshape(gh, gw)


def merge_references(queries) -> InContextQuery:
    """Concatenate query stacks from several prompted references."""
    queries = list(queries)
    if not queries:
        raise EmptyQueryError("no reference queries to merge")
    dims = {q.dim for q in queries}
    if len(dims) != 1:
        raise DimensionError(f"query dims disagree across references: {sorted(dims)}")
    scales = {q.scale_id for q in queries}
    if len(scales) != 1:
        raise DimensionError(f"query scales disagree across references: {scales}")
    cells = None
    if all(q.source_cells is not None for q in queries):
        cells = tuple(c for q in queries for c in q.source_cells)
    return InContextQuery(
        vectors=np.concatenate([q.vectors for q in queries], axis=0),
        scale_id=queries[0].scale_id,
        source_cells=cells,
    )
