"""Feature extraction contract shared by all backends.

A backend turns one image into a FeatureBundle: multi-scale feature grids
plus per-scale self-attention matrices. Bundles are immutable value objects;
any backend instance serializes its own extraction calls, so concurrency is
achieved by running multiple instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from ..core import ImagePlane
from ..errors import ValidationError

ROW_SUM_TOL = 1e-5


@dataclass(frozen=True)
class FeatureScale:
    """One feature grid: (h, w, d) tensor tagged with its scale id."""

    scale_id: int
    tensor: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=np.float64)
        if t.ndim != 3:
            raise ValidationError(f"feature tensor must be (h, w, d), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValidationError(f"scale {self.scale_id}: non-finite features")
        t = t.copy()
        t.flags.writeable = False
        object.__setattr__(self, "tensor", t)

    @property
    def grid_hw(self) -> tuple[int, int]:
        return self.tensor.shape[0], self.tensor.shape[1]

    @property
    def dim(self) -> int:
        return self.tensor.shape[2]


@dataclass(frozen=True)
class AttentionScale:
    """Row-stochastic self-attention over the cells of one scale.

    matrix[i, j] is the (head-averaged, renormalized) attention paid by
    cell i to cell j; every row sums to 1.
    """

    scale_id: int
    grid_hw: tuple[int, int]
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        n = self.grid_hw[0] * self.grid_hw[1]
        if m.shape != (n, n):
            raise ValidationError(
                f"attention at scale {self.scale_id}: shape {m.shape}, expected ({n}, {n})"
            )
        if not np.all(np.isfinite(m)):
            raise ValidationError(f"attention at scale {self.scale_id}: non-finite entries")
        sums = m.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
            raise ValidationError(
                f"attention at scale {self.scale_id}: rows not stochastic "
                f"(worst |sum-1|={np.max(np.abs(sums - 1.0)):.3g})"
            )
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "grid_hw", (int(self.grid_hw[0]), int(self.grid_hw[1])))


@dataclass(frozen=True)
class FeatureBundle:
    """Everything one backend pass yields for a single image.

    Scales are ordered coarsest first. `inter_scale_id` names the scale used
    for cross-image matching; the finest scale anchors fused guidance.
    """

    features: tuple[FeatureScale, ...]
    attention: tuple[AttentionScale, ...]
    inter_scale_id: int

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "attention", tuple(self.attention))
        if not self.features:
            raise ValidationError("FeatureBundle needs at least one feature scale")
        sizes = [f.grid_hw[0] * f.grid_hw[1] for f in self.features]
        if any(a > b for a, b in zip(sizes, sizes[1:])):
            raise ValidationError("feature scales must be ordered coarsest first")
        if self.inter_scale_id not in {f.scale_id for f in self.features}:
            raise ValidationError(
                f"inter_scale_id {self.inter_scale_id} not among feature scales"
            )

    def feature(self, scale_id: int) -> FeatureScale:
        for f in self.features:
            if f.scale_id == scale_id:
                return f
        raise KeyError(f"no feature scale {scale_id}")

    def attn(self, scale_id: int) -> AttentionScale:
        for a in self.attention:
            if a.scale_id == scale_id:
                return a
        raise KeyError(f"no attention scale {scale_id}")

    @property
    def inter_feature(self) -> FeatureScale:
        return self.feature(self.inter_scale_id)

    @property
    def finest_feature(self) -> FeatureScale:
        return self.features[-1]


@runtime_checkable
class Backend(Protocol):
    def extract(self, image: ImagePlane) -> FeatureBundle: ...

    def fingerprint(self) -> str: ...

    @property
    def native_resolution(self) -> int | None: ...
