"""JSON header plus raw little-endian payload for volumes and projections."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .errors import DataFormatError, InvalidArgumentError
from .models import ProjectionSet, ScanGeometry, VoxelGrid

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

VOLUME_HEADER_SUFFIX = ".volhdr.json"
VOLUME_PAYLOAD_SUFFIX = ".vol.raw"
PROJECTION_HEADER_SUFFIX = ".projhdr.json"
PROJECTION_PAYLOAD_SUFFIX = ".proj.raw"

DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
VOLUME_ORDER = "x-fastest"
VOLUME_HEADER_FIELDS = {"dims", "spacing_mm", "origin_mm", "dtype", "order"}
PROJECTION_HEADER_FIELDS = set(ScanGeometry.FIELDS) | {"views", "rows", "cols", "dtype"}


def _stem(path: PathLike, suffixes: tuple[str, ...]) -> Path:
    path = Path(path)
    for suffix in suffixes:
        if path.name.endswith(suffix):
            return path.with_name(path.name[: -len(suffix)])
    return path


def volume_paths(path: PathLike) -> tuple[Path, Path]:
    stem = _stem(path, (VOLUME_HEADER_SUFFIX, VOLUME_PAYLOAD_SUFFIX))
    return stem.with_name(stem.name + VOLUME_HEADER_SUFFIX), stem.with_name(stem.name + VOLUME_PAYLOAD_SUFFIX)


def projection_paths(path: PathLike) -> tuple[Path, Path]:
    stem = _stem(path, (PROJECTION_HEADER_SUFFIX, PROJECTION_PAYLOAD_SUFFIX))
    return (
        stem.with_name(stem.name + PROJECTION_HEADER_SUFFIX),
        stem.with_name(stem.name + PROJECTION_PAYLOAD_SUFFIX),
    )


def _dtype_name(values: np.ndarray, dtype: Optional[str]) -> str:
    if dtype is None:
        return "f32" if values.dtype == np.float32 else "f64"
    if dtype not in DTYPES:
        raise InvalidArgumentError(f"unsupported dtype {dtype!r} (expected f32 or f64)")
    return dtype


def _encode(values: np.ndarray, dtype: str) -> bytes:
    if not np.all(np.isfinite(values)):
        raise DataFormatError("refusing to write non-finite values")
    encoded = np.ascontiguousarray(values, dtype=DTYPES[dtype])
    if not np.all(np.isfinite(encoded)):
        raise DataFormatError(f"values overflow {dtype}")
    return encoded.tobytes()


def _read_header(path: Path) -> dict[str, Any]:
    if not path.exists():
        raise FileNotFoundError(f"header not found: {path}")
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"malformed header {path}: {exc}") from exc
    if not isinstance(header, dict):
        raise DataFormatError(f"header {path} must be a JSON object")
    return header


def _read_payload(path: Path, dtype: str, count: int) -> np.ndarray:
    if dtype not in DTYPES:
        raise DataFormatError(f"unsupported dtype {dtype!r} in header")
    if not path.exists():
        raise FileNotFoundError(f"payload not found: {path}")
    raw = path.read_bytes()
    expected = count * DTYPES[dtype].itemsize
    if len(raw) != expected:
        raise DataFormatError(f"payload {path} has {len(raw)} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype=DTYPES[dtype]).copy()


def _write_header(path: Path, header: dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(header, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def write_volume(grid: VoxelGrid, path: PathLike, dtype: Optional[str] = None) -> tuple[Path, Path]:
    dtype = _dtype_name(np.asarray(grid.values), dtype)
    header_path, payload_path = volume_paths(path)
    payload = _encode(grid.values, dtype)
    header = {
        "dims": list(grid.dims),
        "spacing_mm": list(grid.spacing),
        "origin_mm": list(grid.origin),
        "dtype": dtype,
        "order": VOLUME_ORDER,
    }
    _write_header(header_path, header)
    payload_path.write_bytes(payload)
    logger.info("wrote volume %s (%s, %s)", header_path, "x".join(map(str, grid.dims)), dtype)
    return header_path, payload_path


def read_volume(path: PathLike) -> VoxelGrid:
    header_path, payload_path = volume_paths(path)
    header = _read_header(header_path)
    keys = set(header)
    if keys != VOLUME_HEADER_FIELDS:
        raise DataFormatError(
            f"volume header {header_path} fields differ: "
            f"unknown {sorted(keys - VOLUME_HEADER_FIELDS)}, missing {sorted(VOLUME_HEADER_FIELDS - keys)}"
        )
    if header["order"] != VOLUME_ORDER:
        raise DataFormatError(f"unsupported voxel order {header['order']!r}")
    try:
        dims = tuple(int(n) for n in header["dims"])
        spacing = tuple(float(h) for h in header["spacing_mm"])
        origin = tuple(float(o) for o in header["origin_mm"])
        if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3 or min(dims) < 1:
            raise ValueError("dims, spacing_mm and origin_mm need three valid entries")
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed volume header {header_path}: {exc}") from exc
    values = _read_payload(payload_path, header["dtype"], dims[0] * dims[1] * dims[2])
    try:
        return VoxelGrid(dims=dims, spacing=spacing, origin=origin, values=values)
    except InvalidArgumentError as exc:
        raise DataFormatError(f"invalid volume header {header_path}: {exc}") from exc


def write_projections(projections: ProjectionSet, path: PathLike, dtype: Optional[str] = None) -> tuple[Path, Path]:
    dtype = _dtype_name(np.asarray(projections.images), dtype)
    header_path, payload_path = projection_paths(path)
    geom = projections.geometry
    payload = _encode(projections.images, dtype)
    header = geom.to_dict()
    header.update({"views": geom.n_views, "rows": geom.detector_rows, "cols": geom.detector_cols, "dtype": dtype})
    _write_header(header_path, header)
    payload_path.write_bytes(payload)
    logger.info("wrote %d projections to %s (%s)", geom.n_views, header_path, dtype)
    return header_path, payload_path


def read_projections(path: PathLike) -> ProjectionSet:
    header_path, payload_path = projection_paths(path)
    header = _read_header(header_path)
    unknown = set(header) - PROJECTION_HEADER_FIELDS
    if unknown:
        raise DataFormatError(f"unknown fields in projection header {header_path}: {sorted(unknown)}")
    for key in ("views", "rows", "cols", "dtype"):
        if key not in header:
            raise DataFormatError(f"projection header {header_path} lacks {key!r}")
    try:
        geom = ScanGeometry.from_dict({key: header[key] for key in ScanGeometry.FIELDS if key in header})
    except InvalidArgumentError as exc:
        raise DataFormatError(f"invalid geometry in {header_path}: {exc}") from exc
    shape = (int(header["views"]), int(header["rows"]), int(header["cols"]))
    if shape != (geom.n_views, geom.detector_rows, geom.detector_cols):
        raise DataFormatError(f"projection header {header_path} shape {shape} disagrees with its geometry")
    values = _read_payload(payload_path, header["dtype"], shape[0] * shape[1] * shape[2])
    try:
        return ProjectionSet(geometry=geom, images=values.reshape(shape))
    except InvalidArgumentError as exc:
        raise DataFormatError(f"invalid projection payload {payload_path}: {exc}") from exc


def write_geometry(geom: ScanGeometry, path: PathLike) -> Path:
    path = Path(path)
    _write_header(path, geom.to_dict())
    return path


def read_geometry(path: PathLike) -> ScanGeometry:
    return ScanGeometry.from_dict(_read_header(Path(path)))
