from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .errors import DataFormatError, InvalidArgumentError


class RendererKind(str, Enum):
    SIDDON = "siddon"
    TRILINEAR = "trilinear"


class PhantomKind(str, Enum):
    UNIFORM = "uniform"
    SPHERES = "spheres"
    SHELLS = "shells"
    SMOOTH_NOISE = "smooth_noise"
    SHELL_FILAMENTS = "shell_filaments"


def parse_enum(enum_type: type[Enum], value: Any) -> Any:
    if isinstance(value, enum_type):
        return value
    try:
        return enum_type(str(value).strip().lower())
    except ValueError:
        allowed = ", ".join(item.value for item in enum_type)
        raise InvalidArgumentError(f"unknown {enum_type.__name__} {value!r} (expected one of: {allowed})") from None


# Defaults follow the public walnut protocol; they are configuration, not measured facts.
DEFAULT_SOURCE_TO_ISOCENTER = 66.0
DEFAULT_SOURCE_TO_DETECTOR = 199.0

# Desk-scale recipe for the mean-normalized TV; see docs/experiments.md.
DEFAULT_LAMBDA_TV = {RendererKind.SIDDON: 5.0, RendererKind.TRILINEAR: 3.0}
DEFAULT_LR_INITIAL = 0.05

# Full-scale batch sizes.
FULL_BATCH_RAYS = {RendererKind.SIDDON: 550_000, RendererKind.TRILINEAR: 1_800_000}


@dataclass(frozen=True)
class ScanGeometry:
    source_to_isocenter: float
    source_to_detector: float
    detector_rows: int
    detector_cols: int
    pixel_pitch_u: float
    pixel_pitch_v: float
    view_angles: tuple[float, ...]
    detector_vertical_offset: float = 0.0

    FIELDS = (
        "source_to_isocenter",
        "source_to_detector",
        "detector_rows",
        "detector_cols",
        "pixel_pitch_u",
        "pixel_pitch_v",
        "view_angles",
        "detector_vertical_offset",
    )

    def __post_init__(self) -> None:
        object.__setattr__(self, "view_angles", tuple(float(a) for a in self.view_angles))
        if not (self.source_to_detector > self.source_to_isocenter > 0):
            raise InvalidArgumentError(
                "geometry requires source_to_detector > source_to_isocenter > 0 "
                f"(got {self.source_to_detector}, {self.source_to_isocenter})"
            )
        if int(self.detector_rows) < 1 or int(self.detector_cols) < 1:
            raise InvalidArgumentError("detector raster must be at least 1x1")
        if not (self.pixel_pitch_u > 0 and self.pixel_pitch_v > 0):
            raise InvalidArgumentError("pixel pitches must be positive")
        if not self.view_angles:
            raise InvalidArgumentError("geometry needs at least one view angle")
        if not all(math.isfinite(a) for a in self.view_angles):
            raise InvalidArgumentError("view angles must be finite")
        if not math.isfinite(self.detector_vertical_offset):
            raise InvalidArgumentError("detector_vertical_offset must be finite")
        object.__setattr__(self, "detector_rows", int(self.detector_rows))
        object.__setattr__(self, "detector_cols", int(self.detector_cols))

    @property
    def n_views(self) -> int:
        return len(self.view_angles)

    @property
    def pixels_per_view(self) -> int:
        return self.detector_rows * self.detector_cols

    @property
    def n_rays(self) -> int:
        return self.n_views * self.pixels_per_view

    def with_angles(self, angles: Iterable[float]) -> "ScanGeometry":
        return replace(self, view_angles=tuple(angles))

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "ScanGeometry":
        if not isinstance(payload, dict):
            raise DataFormatError("geometry document must be a JSON object")
        unknown = set(payload) - set(cls.FIELDS)
        if unknown:
            raise DataFormatError(f"unknown geometry fields: {sorted(unknown)}")
        missing = [key for key in cls.FIELDS[:-1] if key not in payload]
        if missing:
            raise DataFormatError(f"missing geometry fields: {missing}")
        try:
            return cls(
                source_to_isocenter=float(payload["source_to_isocenter"]),
                source_to_detector=float(payload["source_to_detector"]),
                detector_rows=int(payload["detector_rows"]),
                detector_cols=int(payload["detector_cols"]),
                pixel_pitch_u=float(payload["pixel_pitch_u"]),
                pixel_pitch_v=float(payload["pixel_pitch_v"]),
                view_angles=tuple(float(a) for a in payload["view_angles"]),
                detector_vertical_offset=float(payload.get("detector_vertical_offset", 0.0)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidArgumentError):
                raise
            raise DataFormatError(f"malformed geometry document: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "source_to_isocenter": self.source_to_isocenter,
            "source_to_detector": self.source_to_detector,
            "detector_rows": self.detector_rows,
            "detector_cols": self.detector_cols,
            "pixel_pitch_u": self.pixel_pitch_u,
            "pixel_pitch_v": self.pixel_pitch_v,
            "view_angles": list(self.view_angles),
            "detector_vertical_offset": self.detector_vertical_offset,
        }


@dataclass(frozen=True)
class Ray:
    source: tuple[float, float, float]
    pixel: tuple[float, float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "source", tuple(float(c) for c in self.source))
        object.__setattr__(self, "pixel", tuple(float(c) for c in self.pixel))
        if len(self.source) != 3 or len(self.pixel) != 3:
            raise InvalidArgumentError("ray endpoints must be 3D points")
        if self.length <= 0.0:
            raise InvalidArgumentError("ray source and pixel must differ")

    @property
    def length(self) -> float:
        return math.dist(self.source, self.pixel)

    def point_at(self, alpha: float) -> tuple[float, float, float]:
        return tuple(s + alpha * (p - s) for s, p in zip(self.source, self.pixel))

    def reversed(self) -> "Ray":
        return Ray(source=self.pixel, pixel=self.source)


@dataclass(frozen=True, eq=False)
class RayBundle:
    """Structure-of-arrays form of a ray sequence; row n is ray n."""

    sources: np.ndarray
    pixels: np.ndarray

    def __post_init__(self) -> None:
        sources = np.ascontiguousarray(self.sources, dtype=np.float64).reshape(-1, 3)
        pixels = np.ascontiguousarray(self.pixels, dtype=np.float64).reshape(-1, 3)
        if sources.shape != pixels.shape:
            raise InvalidArgumentError("ray bundle needs as many sources as pixels")
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "pixels", pixels)

    def __len__(self) -> int:
        return int(self.sources.shape[0])

    @classmethod
    def from_rays(cls, rays: Sequence[Ray]) -> "RayBundle":
        if isinstance(rays, RayBundle):
            return rays
        if not rays:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)))
        return cls(np.array([r.source for r in rays]), np.array([r.pixel for r in rays]))

    def take(self, indices: np.ndarray) -> "RayBundle":
        return RayBundle(self.sources[indices], self.pixels[indices])

    def reversed(self) -> "RayBundle":
        return RayBundle(self.pixels.copy(), self.sources.copy())

    def ray(self, index: int) -> Ray:
        return Ray(tuple(self.sources[index]), tuple(self.pixels[index]))


def _triple(values: Iterable[Any], cast: type) -> tuple:
    items = tuple(cast(v) for v in values)
    if len(items) != 3:
        raise InvalidArgumentError(f"expected three components, got {len(items)}")
    return items


@dataclass(eq=False)
class VoxelGrid:
    """Scalar field on a regular grid.

    ``values`` is flat with voxel (i, j, k) at ``i + nx * (j + ny * k)``;
    ``origin`` is the outer corner of voxel (0, 0, 0).
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    values: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.dims = _triple(self.dims, int)
        self.spacing = _triple(self.spacing, float)
        self.origin = _triple(self.origin, float)
        if min(self.dims) < 1:
            raise InvalidArgumentError(f"grid dims must be >= 1, got {self.dims}")
        if min(self.spacing) <= 0:
            raise InvalidArgumentError(f"grid spacing must be > 0, got {self.spacing}")
        if self.values is None:
            self.values = np.zeros(self.n_voxels, dtype=np.float64)
        values = np.asarray(self.values)
        if values.ndim != 1:
            values = values.reshape(-1, order="F") if values.shape == self.dims else values.reshape(-1)
        if values.size != self.n_voxels:
            raise InvalidArgumentError(f"grid of dims {self.dims} needs {self.n_voxels} values, got {values.size}")
        self.values = values

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(n * h for n, h in zip(self.dims, self.spacing))

    @property
    def upper(self) -> tuple[float, float, float]:
        return tuple(o + e for o, e in zip(self.origin, self.extent))

    @classmethod
    def centered(cls, dims: Sequence[int], spacing: Sequence[float], values: Optional[np.ndarray] = None) -> "VoxelGrid":
        dims = _triple(dims, int)
        spacing = _triple(spacing, float)
        origin = tuple(-0.5 * n * h for n, h in zip(dims, spacing))
        return cls(dims=dims, spacing=spacing, origin=origin, values=values)

    @classmethod
    def from_array(cls, array: np.ndarray, spacing: Sequence[float], origin: Optional[Sequence[float]] = None) -> "VoxelGrid":
        array = np.asarray(array)
        if array.ndim != 3:
            raise InvalidArgumentError("from_array expects a 3D array indexed [i, j, k]")
        if origin is None:
            return cls.centered(array.shape, spacing, array.reshape(-1, order="F"))
        return cls(dims=array.shape, spacing=spacing, origin=origin, values=array.reshape(-1, order="F"))

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.dims, order="F")

    def with_values(self, values: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(dims=self.dims, spacing=self.spacing, origin=self.origin, values=values)

    def zeros_like(self) -> "VoxelGrid":
        return self.with_values(np.zeros(self.n_voxels, dtype=np.float64))

    def same_layout(self, other: "VoxelGrid") -> bool:
        return self.dims == other.dims and self.spacing == other.spacing and self.origin == other.origin

    def voxel_center(self, i: int, j: int, k: int) -> tuple[float, float, float]:
        return tuple(o + (idx + 0.5) * h for o, idx, h in zip(self.origin, (i, j, k), self.spacing))


@dataclass(eq=False)
class RenderResult:
    intensities: np.ndarray

    def __len__(self) -> int:
        return int(self.intensities.size)


@dataclass(eq=False)
class ProjectionSet:
    geometry: ScanGeometry
    images: np.ndarray

    def __post_init__(self) -> None:
        expected = (self.geometry.n_views, self.geometry.detector_rows, self.geometry.detector_cols)
        images = np.asarray(self.images)
        if images.ndim == 1 and images.size == int(np.prod(expected)):
            images = images.reshape(expected)
        if images.shape != expected:
            raise InvalidArgumentError(f"projection images have shape {images.shape}, geometry expects {expected}")
        if not np.all(np.isfinite(images)):
            raise InvalidArgumentError("projection images contain non-finite values")
        self.images = images

    @property
    def n_views(self) -> int:
        return self.geometry.n_views

    def flat(self) -> np.ndarray:
        """Intensities in ray order (view-major, then row-major)."""
        return np.ascontiguousarray(self.images, dtype=np.float64).reshape(-1)


@dataclass
class ReconConfig:
    renderer: RendererKind = RendererKind.SIDDON
    lambda_tv: Optional[float] = None
    iterations: int = 50
    lr_initial: float = DEFAULT_LR_INITIAL
    batch_rays: int = 65_536
    m_samples: int = 500
    softplus_beta: float = 20.0
    seed: int = 0

    FIELDS = (
        "renderer",
        "lambda_tv",
        "iterations",
        "lr_initial",
        "batch_rays",
        "m_samples",
        "softplus_beta",
        "seed",
    )

    def __post_init__(self) -> None:
        self.renderer = parse_enum(RendererKind, self.renderer)
        if self.lambda_tv is None:
            self.lambda_tv = DEFAULT_LAMBDA_TV[self.renderer]
        self.lambda_tv = float(self.lambda_tv)
        self.iterations = int(self.iterations)
        self.lr_initial = float(self.lr_initial)
        self.batch_rays = int(self.batch_rays)
        self.m_samples = int(self.m_samples)
        self.softplus_beta = float(self.softplus_beta)
        self.seed = int(self.seed)
        if not (self.lambda_tv >= 0 and math.isfinite(self.lambda_tv)):
            raise InvalidArgumentError("lambda_tv must be a finite value >= 0")
        if self.iterations < 1:
            raise InvalidArgumentError("iterations must be >= 1")
        if not (self.lr_initial > 0 and math.isfinite(self.lr_initial)):
            raise InvalidArgumentError("lr_initial must be > 0")
        if self.batch_rays < 1:
            raise InvalidArgumentError("batch_rays must be >= 1")
        if self.renderer is RendererKind.TRILINEAR and self.m_samples < 2:
            raise InvalidArgumentError("m_samples must be >= 2 for the trilinear renderer")
        if not (self.softplus_beta > 0 and math.isfinite(self.softplus_beta)):
            raise InvalidArgumentError("softplus_beta must be > 0")

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "ReconConfig":
        if not isinstance(payload, dict):
            raise InvalidArgumentError("reconstruction config must be a JSON object")
        kwargs = {key: payload[key] for key in cls.FIELDS if key in payload and payload[key] is not None}
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidArgumentError):
                raise
            raise InvalidArgumentError(f"malformed reconstruction config: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "renderer": self.renderer.value,
            "lambda_tv": self.lambda_tv,
            "iterations": self.iterations,
            "lr_initial": self.lr_initial,
            "batch_rays": self.batch_rays,
            "m_samples": self.m_samples,
            "softplus_beta": self.softplus_beta,
            "seed": self.seed,
        }


@dataclass(eq=False)
class ReconState:
    theta: VoxelGrid
    adam_m: np.ndarray
    adam_v: np.ndarray
    step: int = 0

    @classmethod
    def initial(cls, template: VoxelGrid, theta: Optional[np.ndarray] = None) -> "ReconState":
        values = np.zeros(template.n_voxels, dtype=np.float64) if theta is None else np.array(theta, dtype=np.float64)
        return cls(
            theta=template.with_values(values),
            adam_m=np.zeros(template.n_voxels, dtype=np.float64),
            adam_v=np.zeros(template.n_voxels, dtype=np.float64),
            step=0,
        )


@dataclass(frozen=True)
class MetricReport:
    ssim: float
    psnr: float
    mse: float
    pcc: float

    def to_dict(self) -> dict[str, float]:
        return {"ssim": self.ssim, "psnr": self.psnr, "mse": self.mse, "pcc": self.pcc}

    @classmethod
    def mean(cls, reports: Sequence["MetricReport"]) -> "MetricReport":
        if not reports:
            raise InvalidArgumentError("cannot average an empty list of metric reports")
        return cls(
            ssim=float(np.mean([r.ssim for r in reports])),
            psnr=float(np.mean([r.psnr for r in reports])),
            mse=float(np.mean([r.mse for r in reports])),
            pcc=float(np.mean([r.pcc for r in reports])),
        )
