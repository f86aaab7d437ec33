"""Image fidelity metrics for volumes and 2D images.

Argument order is (reference, test). Only PSNR depends on it: its peak
defaults to the reference maximum.
"""

from __future__ import annotations

import logging
import math
from typing import Optional, Union

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import InvalidArgumentError, UndefinedMetricError
from .models import MetricReport, VoxelGrid

logger = logging.getLogger(__name__)

Field = Union[np.ndarray, VoxelGrid]

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_field(value: Field) -> np.ndarray:
    if isinstance(value, VoxelGrid):
        return np.asarray(value.as_array(), dtype=np.float64)
    return np.asarray(value, dtype=np.float64)


def _pair(a: Field, b: Field) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_field(a), _as_field(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise InvalidArgumentError("metrics need non-empty inputs")
    return a, b


def mse(a: Field, b: Field) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(reference: Field, test: Field, peak: Optional[float] = None) -> float:
    reference, test = _pair(reference, test)
    if peak is None:
        peak = float(reference.max())
    if not peak > 0:
        raise InvalidArgumentError(f"PSNR peak must be > 0, got {peak}")
    error = mse(reference, test)
    if error == 0.0:
        return math.inf
    return float(10.0 * np.log10(peak**2 / error))


def pcc(a: Field, b: Field) -> float:
    a, b = _pair(a, b)
    da = a.ravel() - a.mean()
    db = b.ravel() - b.mean()
    norm = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if norm == 0.0:
        raise UndefinedMetricError("Pearson correlation is undefined for a constant input")
    return float(np.clip(np.dot(da, db) / norm, -1.0, 1.0))


def ssim(a: Field, b: Field, dynamic_range: float, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all fully contained uniform windows (stride 1).

    Local statistics use population (biased) moments.
    """
    a, b = _pair(a, b)
    if a.ndim not in (2, 3):
        raise InvalidArgumentError(f"SSIM expects 2D or 3D fields, got {a.ndim}D")
    if not dynamic_range > 0:
        raise InvalidArgumentError(f"SSIM dynamic range must be > 0, got {dynamic_range}")
    if min(a.shape) < window:
        raise InvalidArgumentError(f"every dimension must be >= the {window}-wide window, got {a.shape}")

    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    half = window // 2
    valid = tuple(slice(half, n - half) for n in a.shape)

    def local_mean(x: np.ndarray) -> np.ndarray:
        return uniform_filter(x, size=window, mode="constant")[valid]

    mu_a = local_mean(a)
    mu_b = local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b

    numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(numerator / denominator))


def reference_range(reference: Field) -> float:
    reference = _as_field(reference)
    span = float(reference.max() - reference.min())
    if span <= 0.0:
        logger.warning("reference is constant; using dynamic range 1.0 for SSIM")
        return 1.0
    return span


def evaluate(reference: Field, test: Field, dynamic_range: Optional[float] = None) -> MetricReport:
    reference, test = _pair(reference, test)
    if dynamic_range is None:
        dynamic_range = reference_range(reference)
    peak = float(reference.max())
    try:
        correlation = pcc(reference, test)
    except UndefinedMetricError as exc:
        logger.warning("%s; reporting pcc as NaN", exc)
        correlation = math.nan
    return MetricReport(
        ssim=ssim(reference, test, dynamic_range),
        psnr=psnr(reference, test, peak if peak > 0 else dynamic_range),
        mse=mse(reference, test),
        pcc=correlation,
    )
