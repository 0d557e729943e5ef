"""End-to-end inference: prompts in, alpha mattes out.

The pipeline owns resolution prep for backends with a fixed native
input size (pad to square, resize, and crop predictions back), builds
the in-context query from every prompted reference, and runs guidance
plus the matting head per target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ImagePlane, MattingRequest, rasterize_prompt
from .errors import BackendError, ConfigurationError, DimensionError
from .gridops import resize_bilinear
from .head import MattingHead, build_head, head_forward, load_head
from .similarity import (
    compute_guidance,
    downsample_roi,
    extend_prompt,
    merge_references,
    query_from_grid,
)

EXTEND_M_DEFAULT = 8


@dataclass(frozen=True)
class PipelineConfig:
    use_intra: bool = True
    extend_m: int = EXTEND_M_DEFAULT  # applied to points/scribbles prompts only

    def __post_init__(self):
        if self.extend_m < 0:
            raise ConfigurationError(f"extend_m must be >= 0, got {self.extend_m}")


@dataclass(frozen=True)
class PrepInfo:
    """How an image was squared and resized for the backend."""

    original_hw: tuple
    square_side: int
    native: int | None

    @property
    def was_padded(self) -> bool:
        return self.native is not None and (
            self.original_hw[0] != self.original_hw[1]
            or self.original_hw[0] != self.native
        )


def prep_image(image: ImagePlane, native: int | None):
    """Pad to square (edge replicate) and resize to the native side."""
    if native is None:
        return image, PrepInfo(image.shape[:2], max(image.shape[:2]), None)
    h, w = image.shape[:2]
    side = max(h, w)
    data = image.data
    if h != side or w != side:
        data = np.pad(data, ((0, side - h), (0, side - w), (0, 0)), mode="edge")
    if side != native:
        data = np.clip(resize_bilinear(data, (native, native)), 0.0, 1.0)
    return ImagePlane(data), PrepInfo((h, w), side, native)


def prep_mask(mask: np.ndarray, info: PrepInfo) -> np.ndarray:
    """Apply the image prep to a binary raster (padding adds background)."""
    if info.native is None:
        return mask
    h, w = info.original_hw
    side = info.square_side
    out = np.pad(
        np.asarray(mask, dtype=np.float64),
        ((0, side - h), (0, side - w)),
        mode="constant",
    )
    if side != info.native:
        out = (resize_bilinear(out, (info.native, info.native)) > 0.5).astype(np.float64)
    return out


def unprep_map(arr: np.ndarray, info: PrepInfo) -> np.ndarray:
    """Resize a prediction back to the square and crop the padding off."""
    if info.native is None:
        return arr
    side = info.square_side
    if arr.shape != (side, side):
        arr = resize_bilinear(arr, (side, side))
    h, w = info.original_hw
    return np.clip(arr[:h, :w], 0.0, 1.0)


@dataclass(frozen=True)
class TargetResult:
    alpha: np.ndarray  # (H, W) float64 in [0, 1]
    guidance: np.ndarray  # (H, W) float64 in [0, 1], fused map upsampled


class InContextMatter:
    """Backend + head + similarity chain for MattingRequest batches."""

    def __init__(self, backend, head: MattingHead, config: PipelineConfig = PipelineConfig()):
        self.backend = backend
        self.head = head
        self.config = config
        self._check_head_alignment()

    @staticmethod
    def from_checkpoint(backend, checkpoint_path, config: PipelineConfig = PipelineConfig()):
        head_config, params = load_head(checkpoint_path)
        return InContextMatter(backend, build_head(head_config, params), config)

    def _check_head_alignment(self):
        # catch head/backend mismatches before the first conv does; heavy
        # backends (fixed native resolution) are checked on first use
        if self.backend.native_resolution is not None:
            return
        probe = ImagePlane(np.zeros((64, 64, 3)))
        try:
            bundle = self.backend.extract(probe)
        except BackendError:
            return  # dump backends cannot serve probes; checked at use
        self._verify_bundle(bundle)

    def _verify_bundle(self, bundle):
        dims = tuple(f.tensor.shape[2] for f in bundle.features)
        expected = tuple(self.head.config.feature_channels)
        if dims != expected:
            raise DimensionError(
                f"head expects feature channels {expected}, backend provides {dims}"
            )

    def _reference_query(self, image: ImagePlane, prompt):
        prepped, info = prep_image(image, self.backend.native_resolution)
        bundle = self.backend.extract(prepped)
        raster = rasterize_prompt(prompt, *image.shape[:2]).data
        raster = prep_mask(raster, info)
        grid_hw = bundle.inter_feature.tensor.shape[:2]
        roi_grid = downsample_roi(raster, grid_hw)
        if prompt.kind in ("points", "scribbles") and self.config.extend_m > 0:
            roi_grid = extend_prompt(roi_grid, bundle, self.config.extend_m)
        return query_from_grid(bundle.inter_feature, roi_grid)

    def _predict_one(self, query, image: ImagePlane) -> TargetResult:
        prepped, info = prep_image(image, self.backend.native_resolution)
        bundle = self.backend.extract(prepped)
        self._verify_bundle(bundle)
        guidance = compute_guidance(query, bundle, use_intra=self.config.use_intra)
        alpha = head_forward(
            self.head,
            prepped.data,
            [f.tensor for f in bundle.features],
            list(guidance.per_scale),
            guidance.fused,
        )
        alpha = unprep_map(alpha, info)
        fused_full = resize_bilinear(guidance.fused, prepped.data.shape[:2])
        fused_full = np.clip(unprep_map(fused_full, info), 0.0, 1.0)
        return TargetResult(alpha=alpha, guidance=fused_full)

    def process(self, request: MattingRequest):
        """One TargetResult per request target, in order."""
        queries = [
            self._reference_query(img, prompt) for img, prompt in request.references
        ]
        merged = merge_references(queries)
        return [self._predict_one(merged, target) for target in request.targets]

    def evaluate_model(self, references, targets):
        """metrics.run_protocol adapter: returns plain alpha arrays."""
        request = MattingRequest(targets=tuple(targets), references=tuple(references))
        return [result.alpha for result in self.process(request)]
