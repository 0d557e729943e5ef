"""PNG raster I/O. 8-bit and 16-bit inputs are normalized to [0, 1]."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .core import AlphaMatte, ImagePlane
from .errors import IconmatError, ValidationError

IMAGE_EXTENSIONS = (".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg", ".webp")


def _normalize(arr: np.ndarray, path) -> np.ndarray:
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype == np.uint16:
        return arr.astype(np.float64) / 65535.0
    raise ValidationError(f"{path}: unsupported raster dtype {arr.dtype}")


def load_image(path: str | Path) -> ImagePlane:
    """Load a 3-channel image as RGB in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IconmatError(f"unable to read image: {path}")
    if raw.ndim == 2:
        raw = cv2.cvtColor(raw, cv2.COLOR_GRAY2BGR)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return ImagePlane(_normalize(rgb, path))


def load_gray(path: str | Path) -> ImagePlane:
    """Load a single-channel raster (alpha matte or mask) in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IconmatError(f"unable to read raster: {path}")
    if raw.ndim == 3:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2GRAY)
    return ImagePlane(_normalize(raw, path))


def load_alpha(path: str | Path) -> AlphaMatte:
    return AlphaMatte(load_gray(path))


def load_binary_mask(path: str | Path) -> ImagePlane:
    """Load a mask PNG; any value > 0.5 counts as foreground."""
    plane = load_gray(path)
    return ImagePlane((plane.data > 0.5).astype(np.float64))


def save_image(path: str | Path, image: ImagePlane) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.round(image.data * 255.0).astype(np.uint8)
    if image.channels == 3:
        data = cv2.cvtColor(data, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), data):
        raise IconmatError(f"failed to write {path}")


def save_alpha(path: str | Path, alpha: AlphaMatte) -> None:
    """Save an alpha matte as an 8-bit grayscale PNG."""
    save_image(path, alpha.plane)


def save_alpha_16bit(path: str | Path, alpha: AlphaMatte) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.round(alpha.values * 65535.0).astype(np.uint16)
    if not cv2.imwrite(str(path), data):
        raise IconmatError(f"failed to write {path}")


def save_binary_mask(path: str | Path, mask: ImagePlane) -> None:
    """Save a binary mask as PNG with values {0, 255}."""
    if not np.all((mask.data == 0.0) | (mask.data == 1.0)):
        raise ValidationError("mask is not binary")
    save_image(path, mask)


def list_images(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )
