from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError, InvalidArgumentError
from .models import DEFAULT_LR_INITIAL, FULL_BATCH_RAYS, ReconConfig, RendererKind


APP_NAME = "VoxelCT"

DEFAULT_CONFIG: dict[str, Any] = {
    "config_schema": 1,
    "ui_language": "ja",
    "threads": 0,
    "renderer": "siddon",
    "lambda_tv": None,
    "iterations": 50,
    "lr_initial": DEFAULT_LR_INITIAL,
    "batch_rays": 65_536,
    "m_samples": 500,
    "softplus_beta": 20.0,
    "seed": 0,
}

# Keys a --config document may set; the rest are per-user settings.
RECON_CONFIG_KEYS = frozenset(DEFAULT_CONFIG) - {"config_schema", "ui_language", "threads"}

BATCH_PRESETS: dict[str, int] = {
    "desk": 65_536,
    "full-siddon": FULL_BATCH_RAYS[RendererKind.SIDDON],
    "full-trilinear": FULL_BATCH_RAYS[RendererKind.TRILINEAR],
}


def _base_appdata_dir() -> Path:
    return Path(os.getenv("APPDATA", Path.home()))


def app_data_dir() -> Path:
    return _base_appdata_dir() / APP_NAME


def config_path() -> Path:
    return app_data_dir() / "config.json"


def _deep_copy_defaults() -> dict[str, Any]:
    return json.loads(json.dumps(DEFAULT_CONFIG))


def _clamped_int(value: Any, default: int, low: int, high: int) -> int:
    try:
        return max(low, min(high, int(value)))
    except (TypeError, ValueError):
        return default


def _positive_float(value: Any, default: float) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        return default
    return number if number > 0 else default


def normalize_config(data: dict[str, Any]) -> dict[str, Any]:
    """Coerce user-level values into range; bad values fall back to defaults."""
    data["ui_language"] = "en" if str(data.get("ui_language", "ja")).strip().lower() == "en" else "ja"
    data["threads"] = _clamped_int(data.get("threads", 0), 0, 0, 4096)
    renderer = str(data.get("renderer", "siddon")).strip().lower()
    data["renderer"] = renderer if renderer in {kind.value for kind in RendererKind} else "siddon"
    data["iterations"] = _clamped_int(data.get("iterations"), 50, 1, 100_000)
    data["batch_rays"] = _clamped_int(data.get("batch_rays"), 65_536, 1, 100_000_000)
    data["m_samples"] = _clamped_int(data.get("m_samples"), 500, 2, 1_000_000)
    data["seed"] = _clamped_int(data.get("seed"), 0, -(2**63), 2**63 - 1)
    data["lr_initial"] = _positive_float(data.get("lr_initial"), DEFAULT_LR_INITIAL)
    data["softplus_beta"] = _positive_float(data.get("softplus_beta"), 20.0)
    raw_lambda = data.get("lambda_tv")
    if raw_lambda is not None:
        try:
            data["lambda_tv"] = max(0.0, float(raw_lambda))
        except (TypeError, ValueError):
            data["lambda_tv"] = None
    data["config_schema"] = 1
    return data


def load_config() -> dict[str, Any]:
    """Defaults overlaid with the per-user config file, if one is readable."""
    data = _deep_copy_defaults()
    path = config_path()
    if not path.exists():
        return data

    loaded: dict[str, Any] = {}
    try:
        candidate = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(candidate, dict):
            loaded = candidate
    except Exception:
        return data

    for key, value in loaded.items():
        if key in DEFAULT_CONFIG:
            data[key] = value
    return normalize_config(data)


def save_config(config: dict[str, Any]) -> None:
    path = config_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config, indent=2, ensure_ascii=False), encoding="utf-8")


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Strict reader for an explicit ``--config`` document."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    user_only = set(payload) & (set(DEFAULT_CONFIG) - RECON_CONFIG_KEYS)
    if user_only:
        raise ConfigError(f"{sorted(user_only)} in {path} are per-user settings, not reconstruction parameters")
    unknown = set(payload) - RECON_CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {sorted(unknown)}")
    return payload


def build_recon_config(
    user: Optional[dict[str, Any]] = None,
    document: Optional[dict[str, Any]] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> ReconConfig:
    """Layer defaults <- user file <- --config document <- CLI flags."""
    merged = _deep_copy_defaults() if user is None else dict(user)
    for layer in (document or {}, overrides or {}):
        for key, value in layer.items():
            if value is not None:
                merged[key] = value
    # A renderer switch without an explicit lambda picks that renderer's default.
    if merged.get("lambda_tv") is None:
        merged.pop("lambda_tv", None)
    try:
        return ReconConfig.from_dict(merged)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc
