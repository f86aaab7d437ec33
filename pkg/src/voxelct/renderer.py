"""Differentiable X-ray projectors; each adjoint scatters with its forward trace's own weights."""

from __future__ import annotations

import logging
import math
from typing import Sequence, Union

import numba
import numpy as np
from numba import njit, prange

from .errors import InvalidArgumentError
from .geometry import ray_bundle
from .models import ProjectionSet, Ray, RayBundle, RenderResult, RendererKind, ScanGeometry, VoxelGrid, parse_enum

logger = logging.getLogger(__name__)

RayInput = Union[RayBundle, Sequence[Ray]]


@njit(cache=True)
def _length(s, p):
    dx = p[0] - s[0]
    dy = p[1] - s[1]
    dz = p[2] - s[2]
    return math.sqrt(dx * dx + dy * dy + dz * dz)


@njit(cache=True)
def _clip_to_box(s, d, origin, upper):
    """Parametric interval of the segment s + a*d, a in [0, 1], inside the box."""
    a_min = 0.0
    a_max = 1.0
    for axis in range(3):
        if d[axis] == 0.0:
            # Half-open slab: a ray lying on the lower face belongs to the grid.
            if s[axis] < origin[axis] or s[axis] >= upper[axis]:
                return 1.0, 0.0
        else:
            t1 = (origin[axis] - s[axis]) / d[axis]
            t2 = (upper[axis] - s[axis]) / d[axis]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > a_min:
                a_min = t1
            if t2 < a_max:
                a_max = t2
    return a_min, a_max


@njit(cache=True)
def _siddon_trace(s, p, origin, spacing, dims, idx_out, len_out):
    d = p - s
    upper = origin + spacing * dims
    a_min, a_max = _clip_to_box(s, d, origin, upper)
    if a_max <= a_min:
        return 0

    plane = np.zeros(3, dtype=np.int64)
    step = np.zeros(3, dtype=np.int64)
    a_next = np.full(3, np.inf)
    for axis in range(3):
        if d[axis] != 0.0:
            f = (s[axis] + a_min * d[axis] - origin[axis]) / spacing[axis]
            if d[axis] > 0.0:
                step[axis] = 1
                plane[axis] = int(math.floor(f)) + 1
            else:
                step[axis] = -1
                plane[axis] = int(math.ceil(f)) - 1
            a_next[axis] = (origin[axis] + plane[axis] * spacing[axis] - s[axis]) / d[axis]
            while a_next[axis] <= a_min:
                plane[axis] += step[axis]
                a_next[axis] = (origin[axis] + plane[axis] * spacing[axis] - s[axis]) / d[axis]

    count = 0
    a_cur = a_min
    while a_cur < a_max:
        a_new = min(a_next[0], a_next[1], a_next[2], a_max)
        if a_new > a_cur:
            mid = 0.5 * (a_cur + a_new)
            flat = 0
            stride = 1
            for axis in range(3):
                pos = (s[axis] + mid * d[axis] - origin[axis]) / spacing[axis]
                index = int(math.floor(pos))
                if index < 0:
                    index = 0
                elif index >= dims[axis]:
                    index = dims[axis] - 1
                flat += index * stride
                stride *= dims[axis]
            idx_out[count] = flat
            len_out[count] = a_new - a_cur
            count += 1
        for axis in range(3):
            if a_next[axis] <= a_new:
                plane[axis] += step[axis]
                a_next[axis] = (origin[axis] + plane[axis] * spacing[axis] - s[axis]) / d[axis]
        a_cur = a_new
    return count


@njit(cache=True)
def _trilinear_trace(s, p, origin, spacing, dims, m_samples, idx_out, w_out):
    d = p - s
    upper = origin + spacing * dims
    a_min, a_max = _clip_to_box(s, d, origin, upper)
    if a_max <= a_min:
        return 0

    delta = (a_max - a_min) / (m_samples - 1)
    count = 0
    frac = np.zeros(3)
    base = np.zeros(3, dtype=np.int64)
    for q in range(m_samples):
        alpha = a_max if q == m_samples - 1 else a_min + q * delta
        # Clamped half weights at both ends keep the weights summing to a_max - a_min.
        weight = 0.5 * delta if (q == 0 or q == m_samples - 1) else delta
        for axis in range(3):
            pos = (s[axis] + alpha * d[axis] - origin[axis]) / spacing[axis] - 0.5
            cell = math.floor(pos)
            base[axis] = int(cell)
            frac[axis] = pos - cell
        for corner in range(8):
            flat = 0
            stride = 1
            w = weight
            inside = True
            for axis in range(3):
                bit = (corner >> axis) & 1
                index = base[axis] + bit
                if index < 0 or index >= dims[axis]:
                    inside = False
                    break
                w *= frac[axis] if bit == 1 else 1.0 - frac[axis]
                flat += index * stride
                stride *= dims[axis]
            if inside and w != 0.0:
                idx_out[count] = flat
                w_out[count] = w
                count += 1
    return count


@njit(parallel=True, cache=True)
def _siddon_forward_kernel(values, origin, spacing, dims, sources, pixels, n_chunks, out):
    n_rays = sources.shape[0]
    capacity = dims[0] + dims[1] + dims[2] + 4
    for chunk in prange(n_chunks):
        idx = np.empty(capacity, dtype=np.int64)
        seg = np.empty(capacity, dtype=np.float64)
        for r in range(chunk * n_rays // n_chunks, (chunk + 1) * n_rays // n_chunks):
            count = _siddon_trace(sources[r], pixels[r], origin, spacing, dims, idx, seg)
            acc = 0.0
            for q in range(count):
                acc += values[idx[q]] * seg[q]
            out[r] = _length(sources[r], pixels[r]) * acc


@njit(parallel=True, cache=True)
def _siddon_adjoint_kernel(origin, spacing, dims, sources, pixels, upstream, n_chunks, buffers):
    n_rays = sources.shape[0]
    capacity = dims[0] + dims[1] + dims[2] + 4
    for chunk in prange(n_chunks):
        idx = np.empty(capacity, dtype=np.int64)
        seg = np.empty(capacity, dtype=np.float64)
        for r in range(chunk * n_rays // n_chunks, (chunk + 1) * n_rays // n_chunks):
            if upstream[r] == 0.0:
                continue
            count = _siddon_trace(sources[r], pixels[r], origin, spacing, dims, idx, seg)
            scale = upstream[r] * _length(sources[r], pixels[r])
            for q in range(count):
                buffers[chunk, idx[q]] += scale * seg[q]


@njit(parallel=True, cache=True)
def _trilinear_forward_kernel(values, origin, spacing, dims, sources, pixels, m_samples, n_chunks, out):
    n_rays = sources.shape[0]
    capacity = 8 * m_samples
    for chunk in prange(n_chunks):
        idx = np.empty(capacity, dtype=np.int64)
        wts = np.empty(capacity, dtype=np.float64)
        for r in range(chunk * n_rays // n_chunks, (chunk + 1) * n_rays // n_chunks):
            count = _trilinear_trace(sources[r], pixels[r], origin, spacing, dims, m_samples, idx, wts)
            acc = 0.0
            for q in range(count):
                acc += values[idx[q]] * wts[q]
            out[r] = _length(sources[r], pixels[r]) * acc


@njit(parallel=True, cache=True)
def _trilinear_adjoint_kernel(origin, spacing, dims, sources, pixels, m_samples, upstream, n_chunks, buffers):
    n_rays = sources.shape[0]
    capacity = 8 * m_samples
    for chunk in prange(n_chunks):
        idx = np.empty(capacity, dtype=np.int64)
        wts = np.empty(capacity, dtype=np.float64)
        for r in range(chunk * n_rays // n_chunks, (chunk + 1) * n_rays // n_chunks):
            if upstream[r] == 0.0:
                continue
            count = _trilinear_trace(sources[r], pixels[r], origin, spacing, dims, m_samples, idx, wts)
            scale = upstream[r] * _length(sources[r], pixels[r])
            for q in range(count):
                buffers[chunk, idx[q]] += scale * wts[q]


def _layout(grid: VoxelGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.asarray(grid.origin, dtype=np.float64),
        np.asarray(grid.spacing, dtype=np.float64),
        np.asarray(grid.dims, dtype=np.int64),
    )


def _chunks(n_rays: int) -> int:
    return max(1, min(numba.get_num_threads(), n_rays))


def _as_bundle(rays: RayInput) -> RayBundle:
    return rays if isinstance(rays, RayBundle) else RayBundle.from_rays(list(rays))


def _check_upstream(bundle: RayBundle, upstream: np.ndarray) -> np.ndarray:
    upstream = np.ascontiguousarray(upstream, dtype=np.float64).reshape(-1)
    if upstream.size != len(bundle):
        raise InvalidArgumentError(f"upstream has {upstream.size} entries for {len(bundle)} rays")
    return upstream


def _check_samples(m_samples: int) -> int:
    if int(m_samples) < 2:
        raise InvalidArgumentError(f"m_samples must be >= 2, got {m_samples}")
    return int(m_samples)


def _reduce(grid: VoxelGrid, buffers: np.ndarray) -> VoxelGrid:
    gradient = np.zeros(grid.n_voxels, dtype=np.float64)
    for chunk in range(buffers.shape[0]):
        gradient += buffers[chunk]
    return grid.with_values(gradient)


def siddon_forward(grid: VoxelGrid, rays: RayInput) -> RenderResult:
    bundle = _as_bundle(rays)
    out = np.zeros(len(bundle), dtype=np.float64)
    if len(bundle):
        values = np.ascontiguousarray(grid.values, dtype=np.float64)
        origin, spacing, dims = _layout(grid)
        _siddon_forward_kernel(values, origin, spacing, dims, bundle.sources, bundle.pixels, _chunks(len(bundle)), out)
    return RenderResult(out)


def siddon_adjoint(grid: VoxelGrid, rays: RayInput, upstream: np.ndarray) -> VoxelGrid:
    """Transpose of ``siddon_forward``; ``grid`` only supplies the layout."""
    bundle = _as_bundle(rays)
    upstream = _check_upstream(bundle, upstream)
    n_chunks = _chunks(len(bundle))
    buffers = np.zeros((n_chunks, grid.n_voxels), dtype=np.float64)
    if len(bundle):
        origin, spacing, dims = _layout(grid)
        _siddon_adjoint_kernel(origin, spacing, dims, bundle.sources, bundle.pixels, upstream, n_chunks, buffers)
    return _reduce(grid, buffers)


def trilinear_forward(grid: VoxelGrid, rays: RayInput, m_samples: int) -> RenderResult:
    m_samples = _check_samples(m_samples)
    bundle = _as_bundle(rays)
    out = np.zeros(len(bundle), dtype=np.float64)
    if len(bundle):
        values = np.ascontiguousarray(grid.values, dtype=np.float64)
        origin, spacing, dims = _layout(grid)
        _trilinear_forward_kernel(
            values, origin, spacing, dims, bundle.sources, bundle.pixels, m_samples, _chunks(len(bundle)), out
        )
    return RenderResult(out)


def trilinear_adjoint(grid: VoxelGrid, rays: RayInput, m_samples: int, upstream: np.ndarray) -> VoxelGrid:
    """Transpose of ``trilinear_forward``; ``grid`` only supplies the layout."""
    m_samples = _check_samples(m_samples)
    bundle = _as_bundle(rays)
    upstream = _check_upstream(bundle, upstream)
    n_chunks = _chunks(len(bundle))
    buffers = np.zeros((n_chunks, grid.n_voxels), dtype=np.float64)
    if len(bundle):
        origin, spacing, dims = _layout(grid)
        _trilinear_adjoint_kernel(
            origin, spacing, dims, bundle.sources, bundle.pixels, m_samples, upstream, n_chunks, buffers
        )
    return _reduce(grid, buffers)


def render(grid: VoxelGrid, rays: RayInput, kind: RendererKind | str, m_samples: int = 500) -> RenderResult:
    kind = parse_enum(RendererKind, kind)
    if kind is RendererKind.SIDDON:
        return siddon_forward(grid, rays)
    return trilinear_forward(grid, rays, m_samples)


def render_adjoint(
    grid: VoxelGrid, rays: RayInput, upstream: np.ndarray, kind: RendererKind | str, m_samples: int = 500
) -> VoxelGrid:
    kind = parse_enum(RendererKind, kind)
    if kind is RendererKind.SIDDON:
        return siddon_adjoint(grid, rays, upstream)
    return trilinear_adjoint(grid, rays, m_samples, upstream)


def render_projections(
    grid: VoxelGrid, geom: ScanGeometry, kind: RendererKind | str = RendererKind.SIDDON, m_samples: int = 500
) -> ProjectionSet:
    """Render every view of ``geom``; used both for simulation and novel views."""
    kind = parse_enum(RendererKind, kind)
    images = np.empty((geom.n_views, geom.detector_rows, geom.detector_cols), dtype=np.float64)
    for view_index in range(geom.n_views):
        bundle = ray_bundle(geom, [view_index])
        images[view_index] = render(grid, bundle, kind, m_samples).intensities.reshape(
            geom.detector_rows, geom.detector_cols
        )
    logger.info("rendered %d views (%s, %dx%d)", geom.n_views, kind.value, geom.detector_rows, geom.detector_cols)
    return ProjectionSet(geometry=geom, images=images)
