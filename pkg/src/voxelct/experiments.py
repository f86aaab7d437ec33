"""View sweeps, TV ablation, novel views and epoch timing; training data is always rendered with Siddon."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Any, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .geometry import desk_geometry, novel_view_angles, ray_bundle
from .metrics import SSIM_WINDOW, evaluate, reference_range
from .models import MetricReport, ProjectionSet, ReconConfig, RendererKind, ScanGeometry, VoxelGrid, parse_enum
from .optim import reconstruct, sample_batches
from .renderer import render, render_adjoint, render_projections

logger = logging.getLogger(__name__)

DEFAULT_NOVEL_VIEWS = 8


@dataclass(frozen=True)
class SweepPoint:
    views: int
    renderer: RendererKind
    lambda_tv: float
    volume: MetricReport
    novel: Optional[MetricReport]
    runtime_s: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "views": self.views,
            "renderer": self.renderer.value,
            "lambda_tv": self.lambda_tv,
            "volume": self.volume.to_dict(),
            "novel": self.novel.to_dict() if self.novel is not None else None,
            "runtime_s": self.runtime_s,
        }


def simulate(phantom: VoxelGrid, geom: ScanGeometry) -> ProjectionSet:
    return render_projections(phantom, geom, RendererKind.SIDDON)


def novel_view_report(
    recon: VoxelGrid,
    truth: VoxelGrid,
    geom_train: ScanGeometry,
    n_novel: int = DEFAULT_NOVEL_VIEWS,
    kind: RendererKind | str = RendererKind.SIDDON,
    m_samples: int = 500,
) -> MetricReport:
    """Mean image metrics over poses that sit halfway between training views.

    The reference views come from the ground truth through the exact
    projector; the test views come from the reconstruction through ``kind``.
    """
    if geom_train.detector_rows < SSIM_WINDOW or geom_train.detector_cols < SSIM_WINDOW:
        raise InvalidArgumentError(
            f"novel-view SSIM needs a detector of at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels"
        )
    geom_novel = geom_train.with_angles(novel_view_angles(geom_train.n_views, n_novel))
    reference = simulate(truth, geom_novel).images
    test = render_projections(recon, geom_novel, kind, m_samples).images
    reports = [
        evaluate(reference[view], test[view], reference_range(reference)) for view in range(geom_novel.n_views)
    ]
    return MetricReport.mean(reports)


def run_point(
    phantom: VoxelGrid,
    n_views: int,
    config: ReconConfig,
    detector_pixels: Optional[int] = None,
    n_novel: int = DEFAULT_NOVEL_VIEWS,
) -> SweepPoint:
    geom = desk_geometry(n_views, phantom, detector_pixels)
    projections = simulate(phantom, geom)
    started = time.perf_counter()
    recon = reconstruct(projections, phantom.zeros_like(), config)
    runtime = time.perf_counter() - started
    volume = evaluate(phantom, recon)
    novel = None
    if n_novel > 0 and min(geom.detector_rows, geom.detector_cols) >= SSIM_WINDOW:
        novel = novel_view_report(recon, phantom, geom, n_novel, config.renderer, config.m_samples)
    logger.info(
        "%d views, %s, lambda_tv=%g: volume SSIM %.4f (%.1fs)",
        n_views,
        config.renderer.value,
        config.lambda_tv,
        volume.ssim,
        runtime,
    )
    return SweepPoint(
        views=n_views,
        renderer=config.renderer,
        lambda_tv=config.lambda_tv,
        volume=volume,
        novel=novel,
        runtime_s=runtime,
    )


def view_sweep(
    phantom: VoxelGrid,
    view_counts: Sequence[int],
    config: ReconConfig,
    detector_pixels: Optional[int] = None,
    n_novel: int = DEFAULT_NOVEL_VIEWS,
) -> list[SweepPoint]:
    if not view_counts:
        raise InvalidArgumentError("view sweep needs at least one view count")
    return [run_point(phantom, int(n), config, detector_pixels, n_novel) for n in view_counts]


def tv_ablation(
    phantom: VoxelGrid,
    n_views: int,
    renderer: RendererKind | str,
    config: Optional[ReconConfig] = None,
    detector_pixels: Optional[int] = None,
) -> dict[str, SweepPoint]:
    """Same run with the renderer's default TV weight and with TV switched off."""
    renderer = parse_enum(RendererKind, renderer)
    base = config if config is not None else ReconConfig(renderer=renderer)
    with_tv = replace(base, renderer=renderer, lambda_tv=None)
    without_tv = replace(base, renderer=renderer, lambda_tv=0.0)
    return {
        "with_tv": run_point(phantom, n_views, with_tv, detector_pixels, n_novel=0),
        "without_tv": run_point(phantom, n_views, without_tv, detector_pixels, n_novel=0),
    }


def time_epoch(
    grid: VoxelGrid,
    geom: ScanGeometry,
    kind: RendererKind | str,
    batch_rays: int,
    m_samples: int = 500,
    seed: int = 0,
) -> float:
    """Wall-clock seconds of one forward + adjoint pass over every ray."""
    kind = parse_enum(RendererKind, kind)
    rays = ray_bundle(geom)
    upstream = np.ones(min(batch_rays, len(rays)), dtype=np.float64)
    # Compile the kernels outside the timed region.
    warmup = rays.take(np.arange(min(2, len(rays))))
    render(grid, warmup, kind, m_samples)
    render_adjoint(grid, warmup, upstream[: len(warmup)], kind, m_samples)

    started = time.perf_counter()
    for indices in sample_batches(len(rays), batch_rays, seed):
        batch = rays.take(np.sort(indices))
        render(grid, batch, kind, m_samples)
        render_adjoint(grid, batch, upstream[: len(batch)], kind, m_samples)
    elapsed = time.perf_counter() - started
    logger.info(
        "%s epoch over %d rays in %d batches: %.3fs",
        kind.value,
        len(rays),
        math.ceil(len(rays) / batch_rays),
        elapsed,
    )
    return elapsed
