from __future__ import annotations

import json

import pytest

from voxelct.config_store import (
    BATCH_PRESETS,
    DEFAULT_CONFIG,
    build_recon_config,
    config_path,
    load_config,
    load_config_file,
    save_config,
)
from voxelct.errors import ConfigError
from voxelct.models import RendererKind


def test_defaults_without_user_file(isolated_appdata):
    config = load_config()
    assert config == DEFAULT_CONFIG
    assert config is not DEFAULT_CONFIG
    assert config_path().parent == isolated_appdata / "VoxelCT"


def test_user_file_is_merged_and_clamped():
    save_config({"iterations": 0, "batch_rays": "1024", "renderer": "TRILINEAR", "ui_language": "en", "stray": 1})
    config = load_config()
    assert config["iterations"] == 1
    assert config["batch_rays"] == 1024
    assert config["renderer"] == "trilinear"
    assert config["ui_language"] == "en"
    assert "stray" not in config


def test_unreadable_user_file_falls_back_to_defaults():
    path = config_path()
    path.parent.mkdir(parents=True)
    path.write_text("{broken", encoding="utf-8")
    assert load_config() == DEFAULT_CONFIG


def test_save_config_writes_indented_json():
    save_config({"ui_language": "ja"})
    text = config_path().read_text(encoding="utf-8")
    assert json.loads(text) == {"ui_language": "ja"}
    assert "\n  " in text


def test_explicit_config_is_strict(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"renderer": "trilinear", "iterations": 3}), encoding="utf-8")
    assert load_config_file(good) == {"renderer": "trilinear", "iterations": 3}

    malformed = tmp_path / "bad.json"
    malformed.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_file(malformed)

    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"learning_rate": 1.0}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_file(unknown)

    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "missing.json")


@pytest.mark.parametrize("key, value", [("threads", 2), ("ui_language", "en"), ("config_schema", 1)])
def test_explicit_config_rejects_user_settings(tmp_path, key, value):
    path = tmp_path / "recon.json"
    path.write_text(json.dumps({"iterations": 3, key: value}), encoding="utf-8")
    with pytest.raises(ConfigError, match=key):
        load_config_file(path)


def test_layers_override_in_order():
    config = build_recon_config(
        user={"iterations": 10, "seed": 1},
        document={"iterations": 20, "lr_initial": 0.5},
        overrides={"iterations": None, "seed": 9},
    )
    assert config.iterations == 20
    assert config.lr_initial == 0.5
    assert config.seed == 9


def test_lambda_tv_follows_the_renderer():
    assert build_recon_config().lambda_tv == 5.0
    assert build_recon_config().lr_initial == 0.05
    trilinear = build_recon_config(overrides={"renderer": "trilinear"})
    assert trilinear.renderer is RendererKind.TRILINEAR
    assert trilinear.lambda_tv == 3.0
    assert build_recon_config(overrides={"renderer": "trilinear", "lambda_tv": 0.0}).lambda_tv == 0.0


def test_invalid_values_raise_config_error():
    with pytest.raises(ConfigError):
        build_recon_config(document={"iterations": 0})
    with pytest.raises(ConfigError):
        build_recon_config(document={"renderer": "cone"})


def test_batch_presets():
    assert BATCH_PRESETS["full-siddon"] == 550_000
    assert BATCH_PRESETS["full-trilinear"] == 1_800_000
