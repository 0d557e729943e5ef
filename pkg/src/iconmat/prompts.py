"""Prompt wire format and evaluation-time prompt synthesis.

Wire coordinates are normalized to [0, 1] so canvas scale on the
client never matters. Pixel mapping is min(int(v * size), size - 1);
serialization uses cell centers so pixel prompts round-trip exactly.
"""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy import ndimage

from .core import POINT_RADIUS, ImagePlane, RoiPrompt, Stroke
from .errors import EmptyPromptError, ValidationError

PROMPT_KINDS = ("points", "scribbles", "mask")


# ------------------------------------------------------------- wire format


def _denorm(value: float, size: int) -> int:
    return min(int(value * size), size - 1)


def _check_unit(value, name):
    if not isinstance(value, (int, float)) or not 0.0 <= float(value) <= 1.0:
        raise ValidationError(f"{name} must be a number in [0, 1], got {value!r}")
    return float(value)


def parse_wire_prompt(doc: dict, image_hw, mask: np.ndarray | None = None) -> RoiPrompt:
    """Wire JSON -> pixel-space RoiPrompt.

    For mask prompts the referenced raster is resolved by the caller
    and passed in; the JSON itself only carries `mask_ref`.
    """
    if not isinstance(doc, dict):
        raise ValidationError("prompt must be a JSON object")
    kind = doc.get("kind")
    if kind not in PROMPT_KINDS:
        raise ValidationError(f"prompt kind must be one of {PROMPT_KINDS}, got {kind!r}")
    h, w = image_hw
    if kind == "points":
        raw = doc.get("points")
        if not isinstance(raw, list) or not raw:
            raise ValidationError("points prompt needs a non-empty 'points' list")
        points = []
        for item in raw:
            if not isinstance(item, (list, tuple)) or len(item) != 2:
                raise ValidationError(f"point must be [row, col], got {item!r}")
            r = _check_unit(item[0], "point row")
            c = _check_unit(item[1], "point col")
            points.append((_denorm(r, h), _denorm(c, w)))
        return RoiPrompt(kind="points", points=tuple(points))
    if kind == "scribbles":
        raw = doc.get("strokes")
        if not isinstance(raw, list) or not raw:
            raise ValidationError("scribbles prompt needs a non-empty 'strokes' list")
        strokes = []
        for item in raw:
            if not isinstance(item, dict) or not isinstance(item.get("points"), list):
                raise ValidationError("stroke must be an object with a 'points' list")
            if not item["points"]:
                raise ValidationError("stroke has no points")
            pts = []
            for p in item["points"]:
                if not isinstance(p, (list, tuple)) or len(p) != 2:
                    raise ValidationError(f"stroke point must be [row, col], got {p!r}")
                r = _check_unit(p[0], "stroke row")
                c = _check_unit(p[1], "stroke col")
                pts.append((_denorm(r, h), _denorm(c, w)))
            frac = _check_unit(item.get("radius", 0.0), "stroke radius")
            radius = max(1, round(frac * min(h, w)))
            strokes.append(Stroke(points=tuple(pts), radius=radius))
        return RoiPrompt(kind="scribbles", strokes=tuple(strokes))
    # mask
    if mask is None:
        raise ValidationError("mask prompt needs a resolved mask raster")
    mask = np.asarray(mask)
    if mask.shape != (h, w):
        raise ValidationError(
            f"mask shape {mask.shape} does not match image {(h, w)}"
        )
    return RoiPrompt(kind="mask", mask=ImagePlane((mask > 0.5).astype(np.float64)))


def serialize_prompt(prompt: RoiPrompt, image_hw, mask_ref: str | None = None) -> dict:
    """Pixel-space RoiPrompt -> wire JSON (exact round-trip)."""
    h, w = image_hw
    if prompt.kind == "points":
        return {
            "kind": "points",
            "points": [[(r + 0.5) / h, (c + 0.5) / w] for r, c in prompt.points],
        }
    if prompt.kind == "scribbles":
        return {
            "kind": "scribbles",
            "strokes": [
                {
                    "points": [[(r + 0.5) / h, (c + 0.5) / w] for r, c in s.points],
                    "radius": s.radius / min(h, w),
                }
                for s in prompt.strokes
            ],
        }
    if mask_ref is None:
        raise ValidationError("serializing a mask prompt needs a mask_ref")
    return {"kind": "mask", "mask_ref": mask_ref}


# ------------------------------------------------- protocol prompt synthesis


def mask_prompt(label: np.ndarray) -> RoiPrompt:
    binary = (np.asarray(label) >= 0.5).astype(np.float64)
    if not binary.any():
        raise EmptyPromptError("label has no foreground at threshold 0.5")
    return RoiPrompt(kind="mask", mask=ImagePlane(binary))


def point_prompt(label: np.ndarray, rng, count: int = 5) -> RoiPrompt:
    """Uniform foreground samples; with replacement only when the
    foreground is smaller than the requested count."""
    fg = np.argwhere(np.asarray(label) >= 0.5)
    if fg.shape[0] == 0:
        raise EmptyPromptError("label has no foreground at threshold 0.5")
    replace = fg.shape[0] < count
    picks = rng.choice(fg.shape[0], size=count, replace=replace)
    points = tuple((int(fg[i, 0]), int(fg[i, 1])) for i in picks)
    return RoiPrompt(kind="points", points=points)


def _skeleton_path(skeleton: np.ndarray, rng):
    """Longest-ish 8-connected path: double sweep from a random pixel."""
    pixels = np.argwhere(skeleton)
    if pixels.shape[0] == 0:
        return []
    pixel_set = {(int(r), int(c)) for r, c in pixels}

    def bfs(start):
        parent = {start: None}
        queue = deque([start])
        last = start
        while queue:
            node = queue.popleft()
            last = node
            r, c = node
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == 0 and dc == 0:
                        continue
                    nxt = (r + dr, c + dc)
                    if nxt in pixel_set and nxt not in parent:
                        parent[nxt] = node
                        queue.append(nxt)
        return last, parent

    seed_pixel = tuple(int(v) for v in pixels[int(rng.integers(0, pixels.shape[0]))])
    far, _ = bfs(seed_pixel)
    end, parent = bfs(far)
    path = []
    node = end
    while node is not None:
        path.append(node)
        node = parent[node]
    return path


def scribble_prompt(label: np.ndarray, rng, max_vertices: int = 32,
                    radius: int = POINT_RADIUS) -> RoiPrompt:
    """One stroke along the foreground skeleton.

    Falls back to a single dot at the innermost foreground pixel when
    the region is too small to skeletonize.
    """
    from skimage.morphology import skeletonize

    binary = np.asarray(label) >= 0.5
    if not binary.any():
        raise EmptyPromptError("label has no foreground at threshold 0.5")
    path = _skeleton_path(skeletonize(binary), rng)
    if not path:
        dist = ndimage.distance_transform_edt(binary)
        peak = np.unravel_index(int(np.argmax(dist)), dist.shape)
        path = [(int(peak[0]), int(peak[1]))]
    if len(path) > max_vertices:
        idx = np.linspace(0, len(path) - 1, max_vertices).round().astype(int)
        path = [path[i] for i in idx]
    stroke = Stroke(points=tuple(path), radius=radius)
    return RoiPrompt(kind="scribbles", strokes=(stroke,))


def protocol_prompt(label: np.ndarray, kind: str, rng) -> RoiPrompt:
    if kind == "mask":
        return mask_prompt(label)
    if kind == "points":
        return point_prompt(label, rng)
    if kind == "scribbles":
        return scribble_prompt(label, rng)
    raise ValidationError(f"unknown prompt kind {kind!r}")
