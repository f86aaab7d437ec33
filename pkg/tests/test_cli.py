from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

import voxelct.optim as optim
from voxelct import run
from voxelct.models import RenderResult
from voxelct.volume_io import read_projections, read_volume


def _phantom(tmp_path, name="truth", kind="spheres", dims="8,8,8"):
    code = run(["phantom", "--kind", kind, "--dims", dims, "--spacing", "1,1,1", "--seed", "7", "--out", str(tmp_path / name)])
    assert code == 0
    return tmp_path / name


def test_phantom_writes_header_and_payload(tmp_path):
    stem = _phantom(tmp_path)
    assert (tmp_path / "truth.volhdr.json").exists()
    assert (tmp_path / "truth.vol.raw").exists()
    assert read_volume(stem).dims == (8, 8, 8)


def test_phantom_is_reproducible(tmp_path):
    _phantom(tmp_path, "a")
    _phantom(tmp_path, "b")
    assert (tmp_path / "a.vol.raw").read_bytes() == (tmp_path / "b.vol.raw").read_bytes()


def test_unknown_phantom_kind_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        run(["phantom", "--kind", "walnut", "--dims", "8", "--out", str(tmp_path / "p")])
    assert info.value.code == 1


def test_render_zero_volume(tmp_path):
    stem = _phantom(tmp_path, kind="uniform")
    volume = read_volume(stem)
    from voxelct.volume_io import write_volume

    write_volume(volume.zeros_like(), tmp_path / "zero")
    assert run(["render", "--volume", str(tmp_path / "zero"), "--views", "3", "--out", str(tmp_path / "proj")]) == 0
    projections = read_projections(tmp_path / "proj")
    # An 8 mm grid at 1 mm spacing gets a 15x15 desk detector.
    assert projections.images.shape == (3, 15, 15)
    assert not projections.images.any()


def test_render_error_codes(tmp_path):
    stem = _phantom(tmp_path)
    assert run(["render", "--volume", str(stem), "--views", "0", "--out", str(tmp_path / "proj")]) == 1
    assert run(["render", "--volume", str(tmp_path / "absent"), "--views", "2", "--out", str(tmp_path / "proj")]) == 2


def test_render_with_geometry_file(tmp_path):
    from voxelct.geometry import make_circular_orbit
    from voxelct.volume_io import write_geometry

    stem = _phantom(tmp_path)
    geometry = write_geometry(
        make_circular_orbit(4, detector_rows=5, detector_cols=6, pixel_pitch_u=4.0, pixel_pitch_v=4.0),
        tmp_path / "geom.json",
    )
    code = run(["render", "--volume", str(stem), "--geometry", str(geometry), "--views", "2", "--out", str(tmp_path / "p")])
    assert code == 0
    projections = read_projections(tmp_path / "p")
    assert projections.images.shape == (2, 5, 6)


def _simulate(tmp_path, views="4"):
    stem = _phantom(tmp_path)
    assert run(["render", "--volume", str(stem), "--views", views, "--out", str(tmp_path / "proj")]) == 0
    return tmp_path / "proj"


def _reconstruct_args(tmp_path, projections, out, *extra):
    return [
        "--threads", "1",
        "reconstruct",
        "--projections", str(projections),
        "--dims", "8,8,8",
        "--iterations", "2",
        "--batch-rays", "64",
        "--seed", "3",
        "--out", str(tmp_path / out),
        *extra,
    ]


def test_reconstruct_is_deterministic_and_logs_progress(tmp_path):
    projections = _simulate(tmp_path)
    csv_path = tmp_path / "progress.csv"
    assert run(_reconstruct_args(tmp_path, projections, "r1", "--progress-csv", str(csv_path))) == 0
    assert run(_reconstruct_args(tmp_path, projections, "r2")) == 0
    assert (tmp_path / "r1.vol.raw").read_bytes() == (tmp_path / "r2.vol.raw").read_bytes()

    with csv_path.open(encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["epoch", "batch", "loss"]
    # 4 views of 15x15 pixels in batches of 64 rays: 15 batches per epoch.
    assert len(rows) == 1 + 2 * 15
    assert all(np.isfinite(float(row[2])) for row in rows[1:])


def test_reconstruct_rejects_malformed_config(tmp_path):
    projections = _simulate(tmp_path, views="2")
    config = tmp_path / "config.json"
    config.write_text("{ not json", encoding="utf-8")
    assert run(_reconstruct_args(tmp_path, projections, "r", "--config", str(config))) == 1


def test_reconstruct_rejects_user_settings_in_config(tmp_path):
    projections = _simulate(tmp_path, views="2")
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"threads": 2, "iterations": 1}), encoding="utf-8")
    assert run(_reconstruct_args(tmp_path, projections, "r", "--config", str(config))) == 1


def test_reconstruct_accepts_config_document(tmp_path):
    projections = _simulate(tmp_path, views="2")
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"renderer": "trilinear", "m_samples": 16, "lambda_tv": 0.0}), encoding="utf-8")
    assert run(_reconstruct_args(tmp_path, projections, "r", "--config", str(config))) == 0
    assert read_volume(tmp_path / "r").dims == (8, 8, 8)


def test_divergence_exit_code(tmp_path, monkeypatch):
    projections = _simulate(tmp_path, views="2")

    def broken_render(grid, rays, kind, m_samples=500):
        return RenderResult(np.full(len(rays), np.inf))

    monkeypatch.setattr(optim, "render", broken_render)
    assert run(_reconstruct_args(tmp_path, projections, "r")) == 3
    assert not (tmp_path / "r.volhdr.json").exists()


def test_evaluate_identical_volumes(tmp_path, capsys):
    stem = _phantom(tmp_path)
    capsys.readouterr()
    assert run(["evaluate", "--test", str(stem), "--reference", str(stem)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["ssim"] == pytest.approx(1.0)
    assert report["mse"] == 0.0
    assert report["psnr"] == float("inf")


def test_evaluate_against_an_empty_reference(tmp_path, capsys):
    from voxelct.volume_io import write_volume

    stem = _phantom(tmp_path)
    write_volume(read_volume(stem).zeros_like(), tmp_path / "empty")
    capsys.readouterr()
    assert run(["evaluate", "--test", str(stem), "--reference", str(tmp_path / "empty")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert math.isnan(report["pcc"])
    assert report["mse"] > 0.0


def test_evaluate_shape_mismatch(tmp_path):
    a = _phantom(tmp_path, "a", dims="8,8,8")
    b = _phantom(tmp_path, "b", dims="8,8,9")
    assert run(["evaluate", "--test", str(a), "--reference", str(b)]) == 2


def test_evaluate_exports_slice_png(tmp_path, qapp):
    stem = _phantom(tmp_path)
    png = tmp_path / "slice.png"
    assert run(["evaluate", "--test", str(stem), "--reference", str(stem), "--slice", "3", "--axis", "y", "--png", str(png)]) == 0
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_sweep_writes_report(tmp_path):
    out = tmp_path / "sweep.json"
    code = run(
        [
            "sweep",
            "--dims", "8",
            "--views", "2,3",
            "--iterations", "1",
            "--batch-rays", "256",
            "--novel-views", "2",
            "--time-epoch",
            "--out", str(out),
        ]
    )
    assert code == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    assert [point["views"] for point in report["points"]] == [2, 3]
    assert set(report["points"][0]["volume"]) == {"ssim", "psnr", "mse", "pcc"}
    assert report["points"][0]["novel"] is not None
    assert set(report["epoch_seconds"]) == {"siddon", "trilinear"}
