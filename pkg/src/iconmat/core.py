"""Domain types and raster semantics shared by every module.

Images are stored as float64 arrays in [0, 1] regardless of on-disk bit
depth. Coordinates are (row, col) with origin at the top-left corner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EmptyPromptError, ValidationError

PROMPT_KINDS = ("points", "scribbles", "mask")
GROUP_KINDS = ("matting", "segmentation")

# Point prompts are dilated to this radius before use; single pixels would
# vanish when the RoI is downsampled to feature resolution.
POINT_RADIUS = 3


def _as_unit_array(data, name: str) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        pass
    elif arr.ndim == 3 and arr.shape[2] == 3:
        pass
    else:
        raise DimensionError(f"{name}: expected (H, W) or (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name}: height and width must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains NaN or Inf")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(
            f"{name}: values outside [0, 1] (min={arr.min():.4g}, max={arr.max():.4g})"
        )
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImagePlane:
    """An H x W (x3) raster with real values in [0, 1].

    Single-channel planes use a 2-D array, RGB planes an (H, W, 3) array.
    Instances are immutable and safe to share across threads.
    """

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_unit_array(self.data, "ImagePlane"))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]


@dataclass(frozen=True)
class AlphaMatte:
    """A single-channel opacity map; per-pixel foreground coverage in [0, 1]."""

    plane: ImagePlane

    def __post_init__(self):
        if self.plane.channels != 1:
            raise DimensionError("AlphaMatte requires a single-channel plane")

    @property
    def values(self) -> np.ndarray:
        return self.plane.data

    @property
    def shape(self) -> tuple[int, int]:
        return self.plane.shape


def _binary_or_die(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValidationError(f"{name}: mask must be strictly binary")
    return arr


@dataclass(frozen=True)
class Stroke:
    """A polyline with a stroke radius, both in pixel units."""

    points: tuple[tuple[int, int], ...]
    radius: int = POINT_RADIUS

    def __post_init__(self):
        if len(self.points) == 0:
            raise ValidationError("Stroke needs at least one point")
        if self.radius < 1:
            raise ValidationError("Stroke radius must be >= 1 px")
        object.__setattr__(
            self, "points", tuple((int(r), int(c)) for r, c in self.points)
        )


@dataclass(frozen=True)
class RoiPrompt:
    """User guidance on the reference image: points, scribbles, or a mask.

    Geometry is stored raw; `rasterize` produces the binary RoI map at the
    reference image resolution, validating bounds at that point.
    """

    kind: str
    points: tuple[tuple[int, int], ...] = ()
    strokes: tuple[Stroke, ...] = ()
    mask: ImagePlane | None = None

    def __post_init__(self):
        if self.kind not in PROMPT_KINDS:
            raise ValidationError(f"unknown prompt kind {self.kind!r}")
        object.__setattr__(
            self, "points", tuple((int(r), int(c)) for r, c in self.points)
        )
        object.__setattr__(self, "strokes", tuple(self.strokes))
        if self.kind == "mask":
            if self.mask is None:
                raise ValidationError("mask prompt requires a mask plane")
            if self.mask.channels != 1:
                raise DimensionError("mask prompt must be single-channel")
            _binary_or_die(self.mask.data, "RoiPrompt.mask")

    def is_empty(self) -> bool:
        if self.kind == "points":
            return len(self.points) == 0
        if self.kind == "scribbles":
            return len(self.strokes) == 0
        return bool(np.count_nonzero(self.mask.data) == 0)

    def rasterize(self, height: int, width: int) -> ImagePlane:
        return rasterize_prompt(self, height, width)


@dataclass(frozen=True)
class ContextGroup:
    """Images sharing a foreground category or instance.

    Members are (image path, label path) pairs; labels are alpha mattes for
    matting groups and binary masks for segmentation groups. One or more
    members can be designated as reference images for inference.
    """

    id: str
    kind: str
    members: tuple[tuple[str, str | None], ...]
    reference_indices: tuple[int, ...] = ()
    category: str | None = None

    def __post_init__(self):
        if self.kind not in GROUP_KINDS:
            raise ValidationError(f"unknown group kind {self.kind!r}")
        if len(self.members) < 1:
            raise ValidationError(f"group {self.id!r} has no members")
        object.__setattr__(
            self,
            "members",
            tuple((str(i), None if l is None else str(l)) for i, l in self.members),
        )
        object.__setattr__(self, "reference_indices", tuple(int(i) for i in self.reference_indices))
        for i in self.reference_indices:
            if not 0 <= i < len(self.members):
                raise ValidationError(
                    f"group {self.id!r}: reference index {i} out of range"
                )


@dataclass(frozen=True)
class MattingRequest:
    """A batch matting task: N targets plus 1..4 prompted references.

    A reference may coincide with a target; with a single image the task
    degenerates to interactive matting of that image.
    """

    targets: tuple[ImagePlane, ...]
    references: tuple[tuple[ImagePlane, RoiPrompt], ...]
    target_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "references", tuple(self.references))
        if len(self.targets) < 1:
            raise ValidationError("MattingRequest needs at least one target")
        if not 1 <= len(self.references) <= 4:
            raise ValidationError("MattingRequest needs 1..4 references")
        for img, prompt in self.references:
            if prompt.is_empty():
                raise EmptyPromptError("reference prompt is empty")
        ids = self.target_ids or tuple(f"target-{i}" for i in range(len(self.targets)))
        if len(ids) != len(self.targets):
            raise ValidationError("target_ids length must match targets")
        object.__setattr__(self, "target_ids", tuple(ids))


def composite(fg: ImagePlane, bg: ImagePlane, alpha: AlphaMatte) -> ImagePlane:
    """Blend foreground over background: out = alpha * fg + (1 - alpha) * bg."""
    if fg.channels != 3 or bg.channels != 3:
        raise DimensionError("composite expects 3-channel foreground/background")
    if fg.shape != bg.shape or fg.shape != alpha.shape:
        raise DimensionError(
            f"composite shape mismatch: fg={fg.shape} bg={bg.shape} alpha={alpha.shape}"
        )
    a = alpha.values[..., None]
    out = a * fg.data + (1.0 - a) * bg.data
    return ImagePlane(np.clip(out, 0.0, 1.0))


def _stamp_disk(canvas: np.ndarray, row: int, col: int, radius: int) -> None:
    h, w = canvas.shape
    r0, r1 = max(0, row - radius), min(h, row + radius + 1)
    c0, c1 = max(0, col - radius), min(w, col + radius + 1)
    rr, cc = np.mgrid[r0:r1, c0:c1]
    inside = (rr - row) ** 2 + (cc - col) ** 2 <= radius * radius
    canvas[r0:r1, c0:c1][inside] = 1.0


def _stamp_segment(canvas: np.ndarray, p: tuple[int, int], q: tuple[int, int], radius: int) -> None:
    h, w = canvas.shape
    r0 = max(0, min(p[0], q[0]) - radius)
    r1 = min(h, max(p[0], q[0]) + radius + 1)
    c0 = max(0, min(p[1], q[1]) - radius)
    c1 = min(w, max(p[1], q[1]) + radius + 1)
    if r0 >= r1 or c0 >= c1:
        return
    rr, cc = np.mgrid[r0:r1, c0:c1]
    pr, pc = float(p[0]), float(p[1])
    dr, dc = float(q[0] - p[0]), float(q[1] - p[1])
    seg_len2 = dr * dr + dc * dc
    if seg_len2 == 0.0:
        t = np.zeros_like(rr, dtype=np.float64)
    else:
        t = np.clip(((rr - pr) * dr + (cc - pc) * dc) / seg_len2, 0.0, 1.0)
    dist2 = (rr - (pr + t * dr)) ** 2 + (cc - (pc + t * dc)) ** 2
    canvas[r0:r1, c0:c1][dist2 <= radius * radius] = 1.0


def _check_bounds(row: int, col: int, height: int, width: int) -> None:
    if not (0 <= row < height and 0 <= col < width):
        raise ValidationError(
            f"prompt coordinate ({row}, {col}) outside image bounds {height}x{width}"
        )


def rasterize_prompt(prompt: RoiPrompt, height: int, width: int) -> ImagePlane:
    """Rasterize a prompt into a strictly binary RoI map of the given size.

    Points become disks of radius 3 px, scribbles are stroked polylines at
    their own radius, masks pass through unchanged (shape-checked).
    """
    if prompt.is_empty():
        raise EmptyPromptError(f"{prompt.kind} prompt is empty")
    if prompt.kind == "mask":
        if prompt.mask.shape != (height, width):
            raise DimensionError(
                f"mask prompt shape {prompt.mask.shape} != target {height}x{width}"
            )
        return prompt.mask
    canvas = np.zeros((height, width), dtype=np.float64)
    if prompt.kind == "points":
        for r, c in prompt.points:
            _check_bounds(r, c, height, width)
            _stamp_disk(canvas, r, c, POINT_RADIUS)
    else:
        for stroke in prompt.strokes:
            for r, c in stroke.points:
                _check_bounds(r, c, height, width)
            pts = stroke.points
            if len(pts) == 1:
                _stamp_disk(canvas, pts[0][0], pts[0][1], stroke.radius)
            for a, b in zip(pts[:-1], pts[1:]):
                _stamp_segment(canvas, a, b, stroke.radius)
    if not canvas.any():
        raise EmptyPromptError("prompt rasterized to an empty RoI")
    return ImagePlane(canvas)
