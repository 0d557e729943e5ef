"""Deterministic toy backend for desk-scale tests.

Features are hand-computable: per cell, the mean RGB of the covered pixels
concatenated with a fixed sinusoidal positional encoding scaled by `w_pos`.
Self-attention is the row-softmax of cosine similarity between cell
features at temperature `temperature`. No learned weights anywhere, so
extraction is a pure function of (image, config).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..core import ImagePlane
from ..errors import ValidationError
from ..gridops import cell_slices
from .base import AttentionScale, FeatureBundle, FeatureScale


@dataclass(frozen=True)
class ToyConfig:
    feature_dim: int = 16
    w_pos: float = 0.1
    temperature: float = 0.1
    scale_divisors: tuple[int, ...] = (16, 8, 4)
    inter_divisor: int = 4

    def __post_init__(self):
        if self.feature_dim <= 3:
            raise ValidationError("feature_dim must exceed the 3 color dims")
        if self.w_pos < 0:
            raise ValidationError("w_pos must be >= 0")
        if self.temperature <= 0:
            raise ValidationError("temperature must be > 0")
        if list(self.scale_divisors) != sorted(self.scale_divisors, reverse=True):
            raise ValidationError("scale_divisors must be ordered coarsest first")
        if self.inter_divisor not in self.scale_divisors:
            raise ValidationError("inter_divisor must be one of scale_divisors")


def positional_encoding(h: int, w: int, dims: int) -> np.ndarray:
    """Fixed sinusoidal encoding of cell centers, shape (h, w, dims)."""
    ys = (np.arange(h, dtype=np.float64) + 0.5) / h
    xs = (np.arange(w, dtype=np.float64) + 0.5) / w
    n_y = (dims + 1) // 2
    n_x = dims - n_y

    def bands(coord: np.ndarray, n: int) -> np.ndarray:
        out = np.empty((coord.size, n), dtype=np.float64)
        for k in range(n):
            phase = coord * np.pi * (2.0 ** (k // 2))
            out[:, k] = np.sin(phase) if k % 2 == 0 else np.cos(phase)
        return out

    ey = bands(ys, n_y)
    ex = bands(xs, n_x)
    return np.concatenate(
        [np.repeat(ey[:, None, :], w, axis=1), np.repeat(ex[None, :, :], h, axis=0)],
        axis=2,
    )


def _cell_means(rgb: np.ndarray, grid_hw: tuple[int, int]) -> np.ndarray:
    gh, gw = grid_hw
    out = np.empty((gh, gw, 3), dtype=np.float64)
    row_sl = cell_slices(rgb.shape[0], gh)
    col_sl = cell_slices(rgb.shape[1], gw)
    for i, rs in enumerate(row_sl):
        for j, cs in enumerate(col_sl):
            out[i, j] = rgb[rs, cs].reshape(-1, 3).mean(axis=0)
    return out


def _cosine_attention(tensor: np.ndarray, temperature: float) -> np.ndarray:
    n = tensor.shape[0] * tensor.shape[1]
    flat = tensor.reshape(n, -1)
    norms = np.linalg.norm(flat, axis=1)
    unit = flat / np.where(norms > 0.0, norms, 1.0)[:, None]
    logits = (unit @ unit.T) / temperature
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


class ToyBackend:
    """Color-plus-position feature extractor; the test oracle backend."""

    def __init__(self, config: ToyConfig | None = None):
        self.config = config or ToyConfig()

    @property
    def native_resolution(self) -> int | None:
        return None

    def fingerprint(self) -> str:
        return "toy:" + hashlib.sha256(repr(self.config).encode()).hexdigest()[:16]

    def extract(self, image: ImagePlane) -> FeatureBundle:
        if image.channels != 3:
            raise ValidationError("toy backend expects a 3-channel image")
        cfg = self.config
        rgb = image.data
        pe_dims = cfg.feature_dim - 3
        features = []
        attention = []
        for divisor in cfg.scale_divisors:
            gh = max(1, -(-image.height // divisor))
            gw = max(1, -(-image.width // divisor))
            colors = _cell_means(rgb, (gh, gw))
            pe = cfg.w_pos * positional_encoding(gh, gw, pe_dims)
            tensor = np.concatenate([colors, pe], axis=2)
            features.append(FeatureScale(scale_id=divisor, tensor=tensor))
            attention.append(
                AttentionScale(
                    scale_id=divisor,
                    grid_hw=(gh, gw),
                    matrix=_cosine_attention(tensor, cfg.temperature),
                )
            )
        return FeatureBundle(
            features=tuple(features),
            attention=tuple(attention),
            inter_scale_id=cfg.inter_divisor,
        )
