"""Slice extraction and 8-bit grayscale export for visual inspection."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Union

import numpy as np
from PySide6.QtGui import QImage

from .errors import DataFormatError, InvalidArgumentError
from .models import VoxelGrid

logger = logging.getLogger(__name__)

AXES = {"x": 0, "y": 1, "z": 2}


def parse_axis(axis: Union[int, str]) -> int:
    if isinstance(axis, str):
        key = axis.strip().lower()
        if key in AXES:
            return AXES[key]
        if key.isdigit():
            axis = int(key)
        else:
            raise InvalidArgumentError(f"unknown axis {axis!r} (expected x, y, z or 0..2)")
    if axis not in (0, 1, 2):
        raise InvalidArgumentError(f"axis must be 0, 1 or 2, got {axis}")
    return int(axis)


def extract_slice(volume: Union[VoxelGrid, np.ndarray], axis: Union[int, str], index: int) -> np.ndarray:
    array = volume.as_array() if isinstance(volume, VoxelGrid) else np.asarray(volume)
    if array.ndim != 3:
        raise InvalidArgumentError(f"expected a 3D volume, got {array.ndim}D")
    axis = parse_axis(axis)
    if not 0 <= index < array.shape[axis]:
        raise InvalidArgumentError(f"slice {index} outside 0..{array.shape[axis] - 1} along axis {axis}")
    return np.asarray(np.take(array, index, axis=axis), dtype=np.float64)


def to_gray8(image: np.ndarray) -> np.ndarray:
    """Min-max normalize into uint8; a constant image maps to zeros."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise InvalidArgumentError(f"expected a 2D image, got {image.ndim}D")
    low, high = float(image.min()), float(image.max())
    if high <= low:
        return np.zeros(image.shape, dtype=np.uint8)
    scaled = np.rint((image - low) / (high - low) * 255.0)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def gray8_image(pixels: np.ndarray) -> QImage:
    # Rows of the first array axis run top to bottom in the image.
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    height, width = pixels.shape
    buffer = pixels.tobytes()
    image = QImage(buffer, width, height, width, QImage.Format_Grayscale8)
    return image.copy()


def save_png(image: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not gray8_image(to_gray8(image)).save(str(path), "PNG"):
        raise DataFormatError(f"could not write PNG {path}")
    logger.info("wrote slice image %s", path)
    return path
