from __future__ import annotations

import os

os.environ.setdefault("QT_QPA_PLATFORM", "offscreen")

import numpy as np
import pytest

from voxelct.models import RayBundle, VoxelGrid


@pytest.fixture(autouse=True)
def isolated_appdata(tmp_path, monkeypatch):
    appdata = tmp_path / "appdata"
    monkeypatch.setenv("APPDATA", str(appdata))
    return appdata


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_rays(rng: np.random.Generator, grid: VoxelGrid, n_rays: int, spread: float = 0.4) -> RayBundle:
    """Rays with random directions through points near the grid center."""
    center = np.asarray(grid.origin) + 0.5 * np.asarray(grid.extent)
    reach = 3.0 * max(grid.extent)
    directions = rng.normal(size=(n_rays, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    anchors = center + rng.uniform(-spread, spread, size=(n_rays, 3)) * np.asarray(grid.extent)
    return RayBundle(anchors - reach * directions, anchors + reach * directions)


def random_grid(rng: np.random.Generator, dims=(8, 8, 8), spacing=(1.0, 1.0, 1.0), low=0.0, high=0.1) -> VoxelGrid:
    grid = VoxelGrid.centered(dims, spacing)
    return grid.with_values(rng.uniform(low, high, size=grid.n_voxels))


@pytest.fixture
def qapp():
    from PySide6.QtWidgets import QApplication

    return QApplication.instance() or QApplication([])
