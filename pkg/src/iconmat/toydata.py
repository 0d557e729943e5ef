"""Deterministic toy scenes for demos and fast end-to-end tests.

Each scene is a 64x64 image with one two-part object (two rectangles
of the same color) on a contrasting background. All cell colors share
the same L2 norm, so toy-backend cosine similarity cleanly separates
same-color from different-color cells.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import raster
from .core import AlphaMatte, ImagePlane
from .errors import ValidationError

SCENE_SIZE = 64
COLOR_NORM = 0.9


def _unit_color(rng) -> np.ndarray:
    v = rng.standard_normal(3)
    v /= np.linalg.norm(v)
    return np.abs(v) * COLOR_NORM  # keep channels in [0, 1]


def _angular_gap(a: np.ndarray, b: np.ndarray, minimum: float = 0.35) -> bool:
    cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return np.arccos(np.clip(cos, -1.0, 1.0)) >= minimum


def make_scene(rng, size: int = SCENE_SIZE):
    """Returns (image (S,S,3), label (S,S)) with a two-part foreground."""
    if size < 32:
        raise ValidationError(f"toy scenes need size >= 32, got {size}")
    bg = _unit_color(rng)
    fg = _unit_color(rng)
    while not _angular_gap(bg, fg):
        fg = _unit_color(rng)
    image = np.tile(bg, (size, size, 1))
    label = np.zeros((size, size))

    def stamp(top, left, h, w):
        image[top : top + h, left : left + w] = fg
        label[top : top + h, left : left + w] = 1.0

    # upper-left part and lower-right part, never touching; all bounds
    # scale with the canvas (the constants reproduce the 64 px layout)
    mn, mx = (10 * size) // 64, (18 * size) // 64
    margin, mid = size // 16, size // 2
    h1, w1 = int(rng.integers(mn, mx)), int(rng.integers(mn, mx))
    h2, w2 = int(rng.integers(mn, mx)), int(rng.integers(mn, mx))
    top1 = int(rng.integers(margin, mid + 1 - h1))
    left1 = int(rng.integers(margin, mid - w1 - margin // 2))
    top2 = int(rng.integers(mid + margin // 2, size - h2 - margin))
    left2 = int(rng.integers(mid + margin // 2, size - w2 - margin))
    stamp(top1, left1, h1, w1)
    stamp(top2, left2, h2, w2)
    return np.clip(image, 0.0, 1.0), label


def make_completion_scene(rng, size: int = SCENE_SIZE, block: int = 16, texel: int = 4,
                          fg_flicker: float = 0.3, bg_flicker: float = 0.45):
    """Scene tuned to show attention completion of a half-prompted object.

    Two same-hue square parts sit on a differently-hued background, and
    every texel (a small aligned square) gets its own brightness while
    hues stay fixed. Cosine attention ignores brightness, so each hue
    forms one tight attention group; dot-product matching against a
    prompt is brightness-sensitive and therefore noisy per cell. The
    useful consequence: propagating a similarity map through attention
    averages the brightness noise away within each hue group, which is
    exactly the behavior completion tests want to exercise.

    Returns (image (S,S,3), label (S,S), part_a (S,S), part_b (S,S)).
    Parts are aligned to `block` so no feature cell straddles an edge.
    """

    def hue(axis):
        v = np.zeros(3)
        v[axis] = 1.0
        v += rng.uniform(0.0, 0.2, size=3)
        return v / np.linalg.norm(v)

    ax_bg, ax_fg = rng.choice(3, size=2, replace=False)
    hue_bg, hue_fg = hue(ax_bg), hue(ax_fg)
    slots = size // block
    order = rng.permutation(slots * slots)
    ay, ax = divmod(int(order[0]), slots)
    by, bx = divmod(int(order[1]), slots)
    label = np.zeros((size, size))
    part_a = np.zeros((size, size))
    part_b = np.zeros((size, size))
    label[ay * block : (ay + 1) * block, ax * block : (ax + 1) * block] = 1.0
    label[by * block : (by + 1) * block, bx * block : (bx + 1) * block] = 1.0
    part_a[ay * block : (ay + 1) * block, ax * block : (ax + 1) * block] = 1.0
    part_b[by * block : (by + 1) * block, bx * block : (bx + 1) * block] = 1.0

    image = np.empty((size, size, 3))
    for ty in range(size // texel):
        for tx in range(size // texel):
            inside = label[ty * texel, tx * texel] > 0.5
            base, flicker = (hue_fg, fg_flicker) if inside else (hue_bg, bg_flicker)
            brightness = 0.62 * (1.0 + rng.uniform(-flicker, flicker))
            image[ty * texel : (ty + 1) * texel, tx * texel : (tx + 1) * texel] = base * brightness
    return np.clip(image, 0.0, 1.0), label, part_a, part_b


def completion_scenes_in_memory(count: int = 20, seed: int = 0, size: int = SCENE_SIZE):
    """Batch of completion scenes as (ImagePlane, label, part_a, part_b)."""
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(count):
        image, label, part_a, part_b = make_completion_scene(rng, size=size)
        scenes.append((ImagePlane(image), label, part_a, part_b))
    return scenes


def make_toy_group(root, count: int = 4, seed: int = 0, size: int = SCENE_SIZE) -> Path:
    """Write a ready-to-ingest matting group; returns the group directory."""
    root = Path(root)
    group_dir = root / "toygroup"
    (group_dir / "images").mkdir(parents=True, exist_ok=True)
    (group_dir / "labels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(count):
        image, label = make_scene(rng, size=size)
        raster.save_image(group_dir / "images" / f"scene_{i:02d}.png", ImagePlane(image))
        raster.save_alpha(
            group_dir / "labels" / f"scene_{i:02d}.png", AlphaMatte(ImagePlane(label))
        )
    (group_dir / "meta.json").write_text(
        json.dumps(
            {"kind": "matting", "category": "toy", "reference_indices": [0]},
            sort_keys=True,
        )
    )
    return group_dir


def toy_scenes_in_memory(count: int = 4, seed: int = 0, size: int = SCENE_SIZE):
    """Same scenes as make_toy_group, without touching disk."""
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(count):
        image, label = make_scene(rng, size=size)
        scenes.append((ImagePlane(image), label))
    return scenes
