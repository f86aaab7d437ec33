"""Circular-orbit cone-beam geometry; isocenter at the origin, orbit in z=0."""

from __future__ import annotations

import logging
import math
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .models import (
    DEFAULT_SOURCE_TO_DETECTOR,
    DEFAULT_SOURCE_TO_ISOCENTER,
    Ray,
    RayBundle,
    ScanGeometry,
    VoxelGrid,
)

logger = logging.getLogger(__name__)


def make_circular_orbit(
    n_views: int,
    source_to_isocenter: float = DEFAULT_SOURCE_TO_ISOCENTER,
    source_to_detector: float = DEFAULT_SOURCE_TO_DETECTOR,
    detector_rows: int = 1,
    detector_cols: int = 1,
    pixel_pitch_u: float = 1.0,
    pixel_pitch_v: float = 1.0,
) -> ScanGeometry:
    if int(n_views) < 1:
        raise InvalidArgumentError(f"n_views must be >= 1, got {n_views}")
    n_views = int(n_views)
    angles = tuple(2.0 * math.pi * k / n_views for k in range(n_views))
    return ScanGeometry(
        source_to_isocenter=source_to_isocenter,
        source_to_detector=source_to_detector,
        detector_rows=detector_rows,
        detector_cols=detector_cols,
        pixel_pitch_u=pixel_pitch_u,
        pixel_pitch_v=pixel_pitch_v,
        view_angles=angles,
        detector_vertical_offset=0.0,
    )


def desk_geometry(
    n_views: int,
    grid: VoxelGrid,
    detector_pixels: Optional[int] = None,
    source_to_isocenter: float = DEFAULT_SOURCE_TO_ISOCENTER,
    source_to_detector: float = DEFAULT_SOURCE_TO_DETECTOR,
    margin: float = 1.05,
) -> ScanGeometry:
    """Circular orbit whose square detector covers the grid's bounding sphere.

    By default the pixel pitch, scaled back to the isocenter, is no coarser
    than the finest voxel spacing.
    """
    radius = 0.5 * math.sqrt(sum(e * e for e in grid.extent))
    if radius >= source_to_isocenter:
        raise InvalidArgumentError(
            f"grid bounding sphere (radius {radius:.3f} mm) reaches the source orbit ({source_to_isocenter} mm)"
        )
    half_width = margin * source_to_detector * radius / math.sqrt(source_to_isocenter**2 - radius**2)
    if detector_pixels:
        pixels = int(detector_pixels)
    else:
        width_at_isocenter = 2.0 * half_width * source_to_isocenter / source_to_detector
        pixels = math.ceil(width_at_isocenter / min(grid.spacing) - 1e-9)
    pitch = 2.0 * half_width / pixels
    return make_circular_orbit(
        n_views,
        source_to_isocenter=source_to_isocenter,
        source_to_detector=source_to_detector,
        detector_rows=pixels,
        detector_cols=pixels,
        pixel_pitch_u=pitch,
        pixel_pitch_v=pitch,
    )


def novel_view_angles(n_train: int, n_novel: int) -> tuple[float, ...]:
    """Evenly spaced poses shifted by half the training spacing.

    They coincide with a training pose only when ``n_novel`` is a multiple
    of ``2 * n_train``.
    """
    if n_train < 1 or n_novel < 1:
        raise InvalidArgumentError("view counts must be >= 1")
    shift = math.pi / n_train
    return tuple(2.0 * math.pi * j / n_novel + shift for j in range(n_novel))


def _view_frame(geom: ScanGeometry, view_index: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    theta = geom.view_angles[view_index]
    c, s = math.cos(theta), math.sin(theta)
    source = np.array([geom.source_to_isocenter * c, geom.source_to_isocenter * s, 0.0])
    axis = np.array([-c, -s, 0.0])
    center = source + geom.source_to_detector * axis + np.array([0.0, 0.0, geom.detector_vertical_offset])
    u_dir = np.array([-s, c, 0.0])
    v_dir = np.array([0.0, 0.0, 1.0])
    return source, center, u_dir, v_dir


def _view_pixels(geom: ScanGeometry, view_index: int) -> tuple[np.ndarray, np.ndarray]:
    source, center, u_dir, v_dir = _view_frame(geom, view_index)
    u = (np.arange(geom.detector_cols) - 0.5 * (geom.detector_cols - 1)) * geom.pixel_pitch_u
    v = (np.arange(geom.detector_rows) - 0.5 * (geom.detector_rows - 1)) * geom.pixel_pitch_v
    pixels = center[None, None, :] + u[None, :, None] * u_dir[None, None, :] + v[:, None, None] * v_dir[None, None, :]
    return source, pixels


def _check_view(geom: ScanGeometry, view_index: int) -> None:
    if not 0 <= view_index < geom.n_views:
        raise InvalidArgumentError(f"view index {view_index} outside 0..{geom.n_views - 1}")


def ray_for_pixel(geom: ScanGeometry, view_index: int, row: int, col: int) -> Ray:
    _check_view(geom, view_index)
    if not (0 <= row < geom.detector_rows and 0 <= col < geom.detector_cols):
        raise InvalidArgumentError(
            f"pixel ({row}, {col}) outside detector raster {geom.detector_rows}x{geom.detector_cols}"
        )
    source, pixels = _view_pixels(geom, view_index)
    return Ray(source=tuple(source), pixel=tuple(pixels[row, col]))


def enumerate_rays(geom: ScanGeometry) -> Iterator[tuple[int, int, int, Ray]]:
    for view_index in range(geom.n_views):
        source, pixels = _view_pixels(geom, view_index)
        source_t = tuple(source)
        for row in range(geom.detector_rows):
            for col in range(geom.detector_cols):
                yield view_index, row, col, Ray(source=source_t, pixel=tuple(pixels[row, col]))


def ray_bundle(geom: ScanGeometry, view_indices: Optional[Sequence[int]] = None) -> RayBundle:
    """All rays of the selected views, in the order of ``enumerate_rays``."""
    views = range(geom.n_views) if view_indices is None else list(view_indices)
    per_view = geom.pixels_per_view
    sources = np.empty((len(views) * per_view, 3), dtype=np.float64)
    pixels = np.empty_like(sources)
    for slot, view_index in enumerate(views):
        _check_view(geom, view_index)
        source, view_pixels = _view_pixels(geom, view_index)
        sources[slot * per_view : (slot + 1) * per_view] = source
        pixels[slot * per_view : (slot + 1) * per_view] = view_pixels.reshape(-1, 3)
    logger.debug("built %d rays for %d views", sources.shape[0], len(views))
    return RayBundle(sources, pixels)
