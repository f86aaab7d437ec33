from __future__ import annotations

import logging
import math
import time
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import expit

from .errors import DivergenceError, InvalidArgumentError
from .geometry import ray_bundle
from .models import ProjectionSet, RayBundle, ReconConfig, ReconState, VoxelGrid
from .renderer import render, render_adjoint

logger = logging.getLogger(__name__)

ProgressSink = Callable[[int, int, float], None]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
SOFTPLUS_LINEAR_THRESHOLD = 30.0


def softplus(theta: np.ndarray, beta: float) -> np.ndarray:
    if not beta > 0:
        raise InvalidArgumentError(f"softplus beta must be > 0, got {beta}")
    theta = np.asarray(theta, dtype=np.float64)
    z = beta * theta
    smooth = np.log1p(np.exp(np.minimum(z, SOFTPLUS_LINEAR_THRESHOLD))) / beta
    mu = np.where(z > SOFTPLUS_LINEAR_THRESHOLD, theta, smooth)
    # exp underflows for very negative z; keep the range strictly positive.
    return np.maximum(mu, np.finfo(np.float64).tiny)


def softplus_grad(theta: np.ndarray, beta: float) -> np.ndarray:
    return expit(beta * np.asarray(theta, dtype=np.float64))


def tv_norm(grid: VoxelGrid) -> tuple[float, VoxelGrid]:
    """Anisotropic total variation, averaged over all forward-difference terms."""
    volume = np.asarray(grid.as_array(), dtype=np.float64)
    gradient = np.zeros_like(volume)
    total = 0.0
    terms = 0
    for axis in range(3):
        if volume.shape[axis] < 2:
            continue
        diff = np.diff(volume, axis=axis)
        terms += diff.size
        total += float(np.abs(diff).sum())
        sign = np.sign(diff)
        head = [slice(None)] * 3
        tail = [slice(None)] * 3
        head[axis] = slice(1, None)
        tail[axis] = slice(None, -1)
        gradient[tuple(head)] += sign
        gradient[tuple(tail)] -= sign
    if terms == 0:
        raise InvalidArgumentError(f"total variation needs at least two voxels along one axis, dims {grid.dims}")
    gradient /= terms
    return total / terms, grid.with_values(gradient.reshape(-1, order="F"))


def photometric_loss(predicted: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if predicted.size != target.size:
        raise InvalidArgumentError(f"loss inputs differ in length: {predicted.size} vs {target.size}")
    if predicted.size == 0:
        raise InvalidArgumentError("loss needs at least one ray")
    residual = predicted - target
    return float(np.mean(np.abs(residual))), np.sign(residual) / residual.size


def sample_batches(total_rays: int, batch_rays: int, seed: int, epoch: int = 0) -> list[np.ndarray]:
    """Uniform sampling without replacement; a fresh permutation per epoch."""
    if batch_rays < 1:
        raise InvalidArgumentError(f"batch_rays must be >= 1, got {batch_rays}")
    rng = np.random.default_rng([int(seed) % 2**64, int(epoch)])
    order = rng.permutation(int(total_rays))
    return [order[start : start + batch_rays] for start in range(0, int(total_rays), batch_rays)]


def lr_at(step: int, total_steps: int, lr_initial: float) -> float:
    if not 0 <= step < total_steps:
        raise InvalidArgumentError(f"step {step} outside schedule of {total_steps} steps")
    return lr_initial * (1.0 - step / total_steps)


def adam_step(
    state: ReconState,
    grad: Union[VoxelGrid, np.ndarray],
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> ReconState:
    g = np.asarray(grad.values if isinstance(grad, VoxelGrid) else grad, dtype=np.float64)
    if g.shape != state.adam_m.shape:
        raise InvalidArgumentError(f"gradient of shape {g.shape} does not match state of shape {state.adam_m.shape}")
    t = state.step + 1
    state.adam_m *= beta1
    state.adam_m += (1.0 - beta1) * g
    state.adam_v *= beta2
    state.adam_v += (1.0 - beta2) * (g * g)
    m_hat = state.adam_m / (1.0 - beta1**t)
    v_hat = state.adam_v / (1.0 - beta2**t)
    theta = np.asarray(state.theta.values, dtype=np.float64)
    state.theta.values = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    state.step = t
    return state


def objective(
    theta: VoxelGrid, rays: RayBundle, targets: np.ndarray, config: ReconConfig
) -> tuple[float, np.ndarray]:
    """Photometric L1 + lambda_tv * TV of softplus(theta), and its gradient w.r.t. theta."""
    mu = theta.with_values(softplus(theta.values, config.softplus_beta))
    predicted = render(mu, rays, config.renderer, config.m_samples).intensities
    value, residual_grad = photometric_loss(predicted, targets)
    grad_mu = render_adjoint(mu, rays, residual_grad, config.renderer, config.m_samples).values
    if config.lambda_tv > 0:
        tv_value, tv_grad = tv_norm(mu)
        value += config.lambda_tv * tv_value
        grad_mu += config.lambda_tv * tv_grad.values
    return value, grad_mu * softplus_grad(theta.values, config.softplus_beta)


def reconstruct(
    projections: ProjectionSet,
    grid_template: VoxelGrid,
    config: ReconConfig,
    progress_sink: Optional[ProgressSink] = None,
) -> VoxelGrid:
    if projections is None or projections.n_views == 0 or projections.images.size == 0:
        raise InvalidArgumentError("reconstruction needs at least one projection")
    rays = ray_bundle(projections.geometry)
    targets = projections.flat()
    state = ReconState.initial(grid_template)
    n_batches = math.ceil(len(rays) / config.batch_rays)
    logger.info(
        "reconstructing %s grid from %d views (%d rays, %d batches/epoch, renderer=%s, lambda_tv=%g)",
        "x".join(map(str, grid_template.dims)),
        projections.n_views,
        len(rays),
        n_batches,
        config.renderer.value,
        config.lambda_tv,
    )

    started = time.perf_counter()
    for epoch in range(config.iterations):
        lr = lr_at(epoch, config.iterations, config.lr_initial)
        epoch_loss = 0.0
        for batch, indices in enumerate(sample_batches(len(rays), config.batch_rays, config.seed, epoch)):
            indices = np.sort(indices)
            value, grad = objective(state.theta, rays.take(indices), targets[indices], config)
            if not math.isfinite(value):
                raise DivergenceError("non-finite loss", epoch, batch, value)
            if not np.all(np.isfinite(grad)):
                raise DivergenceError("non-finite gradient", epoch, batch, value)
            adam_step(state, grad, lr)
            epoch_loss += value
            logger.debug("epoch %d batch %d loss %.6g", epoch, batch, value)
            if progress_sink is not None:
                progress_sink(epoch, batch, value)
        logger.info(
            "epoch %d/%d mean loss %.6g lr %.4g (%.1fs)",
            epoch + 1,
            config.iterations,
            epoch_loss / n_batches,
            lr,
            time.perf_counter() - started,
        )

    return grid_template.with_values(softplus(state.theta.values, config.softplus_beta))
