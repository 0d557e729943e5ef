"""Disk morphology on binary masks.

Erosion treats everything outside the canvas as foreground, so a mask
touching the border keeps its border pixels; dilation treats the
outside as background. With those conventions an all-ones mask is a
fixed point of erosion and an all-zeros mask a fixed point of dilation.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ParameterError


def disk_footprint(radius: int) -> np.ndarray:
    """Pixels within Euclidean distance `radius` of the center."""
    if radius < 1:
        raise ParameterError(f"radius must be >= 1, got {radius}")
    span = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    return (dy * dy + dx * dx) <= radius * radius


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    mask = np.asarray(mask) > 0.5
    return ndimage.binary_erosion(
        mask, structure=disk_footprint(radius), border_value=1
    )


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    mask = np.asarray(mask) > 0.5
    return ndimage.binary_dilation(
        mask, structure=disk_footprint(radius), border_value=0
    )
