"""Synthetic ground-truth volumes for desk-scale experiments.

Positions and radii are given in units of half the smallest grid extent, so
a phantom keeps its layout across resolutions. LACs stay within
[0, 0.1] mm^-1, which puts typical ray totals at 0.5 to 3.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import binary_dilation, generate_binary_structure

from .errors import InvalidArgumentError
from .models import PhantomKind, Ray, VoxelGrid, parse_enum

logger = logging.getLogger(__name__)

MAX_LAC = 0.1

# (lac, radius, center) for the two-sphere phantom.
SPHERES_TABLE = (
    (0.06, 0.45, (-0.30, 0.00, 0.00)),
    (0.10, 0.25, (0.45, 0.20, 0.10)),
)

# (outer radius, lac) from the outside in; each shell fills down to the next radius.
SHELLS_TABLE = (
    (0.90, 0.08),
    (0.70, 0.02),
    (0.50, 0.08),
    (0.30, 0.02),
    (0.12, 0.08),
)


@dataclass(frozen=True)
class AnalyticSphere:
    center: tuple[float, float, float]
    radius: float
    lac: float

    def chord(self, ray: Ray) -> float:
        s = np.asarray(ray.source)
        d = np.asarray(ray.pixel) - s
        length = float(np.linalg.norm(d))
        u = d / length
        offset = np.asarray(self.center) - s
        t0 = float(offset @ u)
        dist2 = float(offset @ offset) - t0 * t0
        if dist2 >= self.radius**2:
            return 0.0
        half = math.sqrt(self.radius**2 - dist2)
        return max(0.0, min(length, t0 + half) - max(0.0, t0 - half))


@dataclass(frozen=True)
class AnalyticPhantom:
    """Superposition of constant-LAC spheres and an optional constant box."""

    spheres: tuple[AnalyticSphere, ...] = ()
    box_lac: float = 0.0
    box_lower: tuple[float, float, float] = (0.0, 0.0, 0.0)
    box_upper: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def line_integral(self, ray: Ray) -> float:
        total = sum(sphere.lac * sphere.chord(ray) for sphere in self.spheres)
        if self.box_lac:
            total += self.box_lac * _box_chord(ray, self.box_lower, self.box_upper)
        return total

    def rasterize(self, grid: VoxelGrid) -> VoxelGrid:
        centers = _voxel_centers(grid)
        volume = np.zeros(grid.dims, dtype=np.float64)
        if self.box_lac:
            volume += self.box_lac
        for sphere in self.spheres:
            dist2 = sum((centers[a] - sphere.center[a]) ** 2 for a in range(3))
            volume[dist2 <= sphere.radius**2] += sphere.lac
        return grid.with_values(volume.reshape(-1, order="F"))


def _box_chord(ray: Ray, lower: Sequence[float], upper: Sequence[float]) -> float:
    s = np.asarray(ray.source)
    d = np.asarray(ray.pixel) - s
    a_min, a_max = 0.0, 1.0
    for axis in range(3):
        if d[axis] == 0.0:
            if not lower[axis] <= s[axis] <= upper[axis]:
                return 0.0
            continue
        t1, t2 = sorted(((lower[axis] - s[axis]) / d[axis], (upper[axis] - s[axis]) / d[axis]))
        a_min, a_max = max(a_min, t1), min(a_max, t2)
    return max(0.0, a_max - a_min) * float(np.linalg.norm(d))


def _voxel_centers(grid: VoxelGrid) -> list[np.ndarray]:
    axes = [grid.origin[a] + (np.arange(grid.dims[a]) + 0.5) * grid.spacing[a] for a in range(3)]
    return list(np.meshgrid(*axes, indexing="ij"))


def _scale(grid: VoxelGrid) -> float:
    return 0.5 * min(grid.extent)


def analytic_phantom(kind: PhantomKind | str, grid: VoxelGrid, value: float = 0.05) -> AnalyticPhantom:
    kind = parse_enum(PhantomKind, kind)
    scale = _scale(grid)
    center = tuple(o + 0.5 * e for o, e in zip(grid.origin, grid.extent))
    if kind is PhantomKind.UNIFORM:
        return AnalyticPhantom(box_lac=value, box_lower=grid.origin, box_upper=grid.upper)
    if kind is PhantomKind.SPHERES:
        spheres = tuple(
            AnalyticSphere(
                center=tuple(c + scale * x for c, x in zip(center, position)),
                radius=scale * radius,
                lac=lac,
            )
            for lac, radius, position in SPHERES_TABLE
        )
        return AnalyticPhantom(spheres=spheres)
    if kind is PhantomKind.SHELLS:
        spheres = []
        previous = 0.0
        for radius, lac in SHELLS_TABLE:
            spheres.append(AnalyticSphere(center=center, radius=scale * radius, lac=lac - previous))
            previous = lac
        return AnalyticPhantom(spheres=tuple(spheres))
    raise InvalidArgumentError(f"phantom kind {kind.value!r} has no closed-form line integrals")


def _smooth_noise(grid: VoxelGrid, rng: np.random.Generator, n_terms: int = 6) -> np.ndarray:
    x, y, z = _voxel_centers(grid)
    extent = max(grid.extent)
    field = np.zeros(grid.dims, dtype=np.float64)
    for _ in range(n_terms):
        freq = rng.integers(0, 3, size=3).astype(np.float64)
        freq[rng.integers(0, 3)] += 1.0
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amplitude = rng.uniform(0.5, 1.0)
        field += amplitude * np.cos(2.0 * math.pi * (freq[0] * x + freq[1] * y + freq[2] * z) / extent + phase)
    low, high = field.min(), field.max()
    if high > low:
        field = (field - low) / (high - low)
    else:
        field = np.full_like(field, 0.5)
    return 0.01 + 0.08 * field


def _shell_filaments(grid: VoxelGrid, rng: np.random.Generator, n_filaments: int = 6) -> np.ndarray:
    x, y, z = _voxel_centers(grid)
    scale = _scale(grid)
    center = np.array([o + 0.5 * e for o, e in zip(grid.origin, grid.extent)])
    radius = np.sqrt((x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2)
    volume = np.where((radius <= 0.9 * scale) & (radius >= 0.75 * scale), 0.08, 0.0)
    volume = np.where(radius < 0.75 * scale, 0.01, volume)

    mask = np.zeros(grid.dims, dtype=bool)
    step = 0.5 * min(grid.spacing)
    spacing = np.asarray(grid.spacing)
    origin = np.asarray(grid.origin)
    dims = np.asarray(grid.dims)
    for _ in range(n_filaments):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        point = center + rng.uniform(-0.4, 0.4, size=3) * scale
        turn = rng.normal(scale=0.15, size=3)
        for _ in range(int(1.2 * scale / step)):
            # Curved path: the heading drifts by a fixed random turn each step.
            direction = direction + step / scale * turn + rng.normal(scale=0.02, size=3)
            direction /= np.linalg.norm(direction)
            point = point + step * direction
            if np.linalg.norm(point - center) >= 0.72 * scale:
                break
            index = np.floor((point - origin) / spacing).astype(int)
            if np.all(index >= 0) and np.all(index < dims):
                mask[tuple(index)] = True
    if max(grid.dims) >= 32:
        mask = binary_dilation(mask, structure=generate_binary_structure(3, 1))
    volume = np.where(mask, 0.06, volume)
    return volume


def make_phantom(
    kind: PhantomKind | str,
    dims: Sequence[int],
    spacing: Sequence[float],
    seed: int = 0,
    value: float = 0.05,
    origin: Optional[Sequence[float]] = None,
) -> VoxelGrid:
    """Deterministic volume per (kind, dims, spacing, seed).

    The analytic kinds (uniform, spheres, shells) do not depend on ``seed``.
    """
    kind = parse_enum(PhantomKind, kind)
    if not 0.0 <= value <= MAX_LAC:
        raise InvalidArgumentError(f"phantom LAC must lie in [0, {MAX_LAC}], got {value}")
    grid = VoxelGrid.centered(dims, spacing) if origin is None else VoxelGrid(dims=dims, spacing=spacing, origin=origin)
    if kind in (PhantomKind.UNIFORM, PhantomKind.SPHERES, PhantomKind.SHELLS):
        result = analytic_phantom(kind, grid, value).rasterize(grid)
    else:
        rng = np.random.default_rng(int(seed) % 2**64)
        if kind is PhantomKind.SMOOTH_NOISE:
            volume = _smooth_noise(grid, rng)
        else:
            volume = _shell_filaments(grid, rng)
        result = grid.with_values(volume.reshape(-1, order="F"))
    result.values = np.clip(result.values, 0.0, MAX_LAC)
    logger.debug("phantom %s %s seed=%d", kind.value, grid.dims, seed)
    return result
