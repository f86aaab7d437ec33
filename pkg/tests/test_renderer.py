from __future__ import annotations

import numba
import numpy as np
import pytest

from conftest import random_grid, random_rays
from voxelct.errors import InvalidArgumentError
from voxelct.geometry import make_circular_orbit, ray_bundle
from voxelct.models import Ray, RayBundle, RendererKind, VoxelGrid
from voxelct.phantoms import AnalyticSphere, analytic_phantom, make_phantom
from voxelct.renderer import (
    render,
    render_adjoint,
    render_projections,
    siddon_adjoint,
    siddon_forward,
    trilinear_adjoint,
    trilinear_forward,
)


def _uniform(dims, value, spacing=(1.0, 1.0, 1.0)) -> VoxelGrid:
    grid = VoxelGrid.centered(dims, spacing)
    return grid.with_values(np.full(grid.n_voxels, value))


def test_siddon_axis_aligned_ray_through_uniform_grid():
    grid = _uniform((4, 4, 4), 0.05)
    ray = Ray((-10.0, 0.5, 0.5), (10.0, 0.5, 0.5))
    assert siddon_forward(grid, [ray]).intensities[0] == pytest.approx(0.2, rel=1e-12)


def test_siddon_picks_the_voxels_along_a_row():
    grid = VoxelGrid.centered((4, 3, 3), (1.0, 2.0, 2.0))
    volume = np.arange(36, dtype=float).reshape((4, 3, 3))
    grid = grid.with_values(volume.reshape(-1, order="F"))
    # Origin is (-2, -3, -3): y = 0 is the middle of row j=1 and z = 2 lies in k=2.
    ray = Ray((-10.0, 0.0, 2.0), (10.0, 0.0, 2.0))
    assert siddon_forward(grid, [ray]).intensities[0] == pytest.approx(volume[:, 1, 2].sum())


def test_siddon_slab_is_half_open():
    grid = _uniform((4, 4, 4), 0.05)
    on_lower_face = Ray((-10.0, -2.0, 0.5), (10.0, -2.0, 0.5))
    on_upper_face = Ray((-10.0, 2.0, 0.5), (10.0, 2.0, 0.5))
    values = siddon_forward(grid, [on_lower_face, on_upper_face]).intensities
    assert values[0] == pytest.approx(0.2)
    assert values[1] == 0.0


def test_ray_missing_the_grid_contributes_nothing():
    grid = _uniform((4, 4, 4), 0.05)
    ray = Ray((-10.0, 9.0, 0.0), (10.0, 9.0, 0.0))
    assert siddon_forward(grid, [ray]).intensities[0] == 0.0
    assert trilinear_forward(grid, [ray], 16).intensities[0] == 0.0
    assert not siddon_adjoint(grid, [ray], np.ones(1)).values.any()


def test_ray_stopping_inside_the_grid_is_truncated():
    grid = _uniform((4, 4, 4), 0.05)
    ray = Ray((-10.0, 0.5, 0.5), (0.0, 0.5, 0.5))
    assert siddon_forward(grid, [ray]).intensities[0] == pytest.approx(0.1)


def test_siddon_matches_closed_form_on_uniform_box(rng):
    grid = VoxelGrid.centered((10, 8, 6), (1.0, 1.5, 2.0))
    phantom = analytic_phantom("uniform", grid, 0.05)
    volume = phantom.rasterize(grid)
    rays = random_rays(rng, grid, 200)
    rendered = siddon_forward(volume, rays).intensities
    expected = np.array([phantom.line_integral(rays.ray(i)) for i in range(len(rays))])
    assert (expected > 0).sum() > 150
    np.testing.assert_allclose(rendered, expected, rtol=1e-9, atol=1e-12)


def test_siddon_approaches_closed_form_on_two_spheres(rng):
    grid = VoxelGrid.centered((48, 48, 48), (0.5, 0.5, 0.5))
    phantom = analytic_phantom("spheres", grid)
    volume = phantom.rasterize(grid)
    rays = random_rays(rng, grid, 120, spread=0.2)
    rendered = siddon_forward(volume, rays).intensities
    expected = np.array([phantom.line_integral(rays.ray(i)) for i in range(len(rays))])
    assert expected.sum() > 0
    assert abs(rendered.sum() - expected.sum()) / expected.sum() < 0.05


def test_reversed_rays_give_the_same_integral(rng):
    grid = random_grid(rng)
    rays = random_rays(rng, grid, 30)
    for kind in RendererKind:
        forward = render(grid, rays, kind, 64).intensities
        backward = render(grid, rays.reversed(), kind, 64).intensities
        np.testing.assert_allclose(forward, backward, rtol=1e-10, atol=1e-14)


def test_trilinear_is_exact_for_piecewise_linear_profile():
    # Constant volume: the interpolant ramps to half value at each face, so
    # the integral over 4 voxels is 3.75 voxel lengths when samples hit the kinks.
    grid = _uniform((4, 3, 3), 0.05)
    ray = Ray((-10.0, 0.0, 0.0), (10.0, 0.0, 0.0))
    assert trilinear_forward(grid, [ray], 9).intensities[0] == pytest.approx(3.75 * 0.05, rel=1e-9)


def test_trilinear_converges_to_siddon_on_smooth_volume(rng):
    grid = VoxelGrid.centered((16, 16, 16), (1.0, 1.0, 1.0))
    x, y, z = np.meshgrid(*[np.arange(16) - 7.5] * 3, indexing="ij")
    blob = 0.1 * np.exp(-(x**2 + y**2 + z**2) / (2.0 * 3.2**2))
    volume = VoxelGrid.from_array(blob, grid.spacing)
    rays = random_rays(rng, grid, 60, spread=0.15)
    exact = siddon_forward(volume, rays).intensities.sum()
    approx = trilinear_forward(volume, rays, 2000).intensities.sum()
    assert abs(approx - exact) / exact < 0.03


def _dense_line_integral(grid: VoxelGrid, ray: Ray, n_samples: int) -> float:
    """Midpoint rule over the ray's box interval, voxel looked up by floor."""
    s = np.asarray(ray.source)
    d = np.asarray(ray.pixel) - s
    lower, upper = np.asarray(grid.origin), np.asarray(grid.upper)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_a = (lower - s) / d
        t_b = (upper - s) / d
    t_a = np.where(d == 0.0, -np.inf, t_a)
    t_b = np.where(d == 0.0, np.inf, t_b)
    t_in = max(0.0, float(np.max(np.minimum(t_a, t_b))))
    t_out = min(1.0, float(np.min(np.maximum(t_a, t_b))))
    if t_out <= t_in:
        return 0.0
    t = t_in + (np.arange(n_samples) + 0.5) * (t_out - t_in) / n_samples
    points = s + t[:, None] * d
    cells = np.floor((points - lower) / np.asarray(grid.spacing)).astype(np.int64)
    cells = np.clip(cells, 0, np.asarray(grid.dims) - 1)
    volume = grid.as_array()
    samples = volume[cells[:, 0], cells[:, 1], cells[:, 2]]
    return float(samples.mean() * (t_out - t_in) * np.linalg.norm(d))


def test_siddon_agrees_with_dense_sampling(rng):
    grid = random_grid(rng, dims=(4, 4, 4), low=0.01)
    rays = random_rays(rng, grid, 20)
    rendered = siddon_forward(grid, rays).intensities
    dense = np.array([_dense_line_integral(grid, rays.ray(i), 100_000) for i in range(len(rays))])
    assert (dense > 0).sum() > 10
    np.testing.assert_allclose(rendered, dense, rtol=1e-3, atol=1e-9)


def test_siddon_error_on_two_spheres_stays_within_the_boundary_shell(rng):
    grid = VoxelGrid.centered((48, 48, 48), (0.5, 0.5, 0.5))
    phantom = analytic_phantom("spheres", grid)
    volume = phantom.rasterize(grid)
    rays = random_rays(rng, grid, 160, spread=0.3)
    rendered = siddon_forward(volume, rays).intensities
    # A voxel takes the sphere's value by its center, so a misattributed point
    # lies within half a voxel diagonal of the sphere surface.
    half_diagonal = 0.5 * float(np.linalg.norm(grid.spacing))
    hits = 0
    for i in range(len(rays)):
        ray = rays.ray(i)
        expected = phantom.line_integral(ray)
        hits += expected > 0
        bound = 0.0
        for sphere in phantom.spheres:
            outer = AnalyticSphere(sphere.center, sphere.radius + half_diagonal, sphere.lac)
            inner = AnalyticSphere(sphere.center, max(sphere.radius - half_diagonal, 0.0), sphere.lac)
            bound += sphere.lac * (outer.chord(ray) - inner.chord(ray))
        assert abs(rendered[i] - expected) <= bound + 1e-9
    assert hits > 40


@pytest.mark.parametrize("kind", list(RendererKind))
def test_raising_a_voxel_never_lowers_an_intensity(rng, kind):
    grid = random_grid(rng)
    rays = random_rays(rng, grid, 100)
    before = render(grid, rays, kind, 64).intensities
    for voxel in rng.choice(grid.n_voxels, size=5, replace=False):
        values = grid.values.copy()
        values[voxel] += 0.5
        after = render(grid.with_values(values), rays, kind, 64).intensities
        assert np.all(after >= before)
        grid, before = grid.with_values(values), after


def test_trilinear_quadrature_self_converges(rng):
    grid = VoxelGrid.centered((16, 16, 16), (1.0, 1.0, 1.0))
    x, y, z = np.meshgrid(*[(np.arange(16) + 0.5) / 16.0] * 3, indexing="ij")
    window = np.sin(np.pi * x) ** 2 * np.sin(np.pi * y) ** 2 * np.sin(np.pi * z) ** 2
    field = 0.1 * window * (1.0 + 0.3 * np.cos(2.0 * np.pi * x) * np.cos(2.0 * np.pi * y) + 0.2 * np.cos(2.0 * np.pi * z))
    volume = VoxelGrid.from_array(field, grid.spacing)
    rays = random_rays(rng, grid, 60, spread=0.15)
    coarse = trilinear_forward(volume, rays, 500).intensities
    fine = trilinear_forward(volume, rays, 5000).intensities
    exact = siddon_forward(volume, rays).intensities
    kept = exact > 1e-3 * exact.max()
    assert kept.sum() > 40
    np.testing.assert_allclose(coarse[kept], fine[kept], rtol=1e-2)
    assert abs(fine.sum() - exact.sum()) / exact.sum() < 0.02


@pytest.mark.parametrize("kind", list(RendererKind))
def test_adjoint_identity(rng, kind):
    for _ in range(5):
        grid = random_grid(rng)
        rays = random_rays(rng, grid, 50)
        upstream = rng.normal(size=len(rays))
        lhs = float(render(grid, rays, kind, 24).intensities @ upstream)
        rhs = float(grid.values @ render_adjoint(grid, rays, upstream, kind, 24).values)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs))


@pytest.mark.parametrize("kind", list(RendererKind))
def test_forward_is_linear(rng, kind):
    a = random_grid(rng)
    b = random_grid(rng)
    rays = random_rays(rng, a, 20)
    combined = a.with_values(2.0 * a.values - 3.0 * b.values)
    expected = 2.0 * render(a, rays, kind, 32).intensities - 3.0 * render(b, rays, kind, 32).intensities
    np.testing.assert_allclose(render(combined, rays, kind, 32).intensities, expected, rtol=1e-12, atol=1e-14)


def test_adjoint_is_bitwise_reproducible(rng):
    grid = random_grid(rng)
    rays = random_rays(rng, grid, 200)
    upstream = rng.normal(size=len(rays))
    first = trilinear_adjoint(grid, rays, 32, upstream).values
    second = trilinear_adjoint(grid, rays, 32, upstream).values
    assert np.array_equal(first, second)


def test_results_do_not_depend_on_thread_count(rng):
    grid = random_grid(rng)
    rays = random_rays(rng, grid, 64)
    upstream = rng.normal(size=len(rays))
    threads = numba.get_num_threads()
    try:
        reference = siddon_forward(grid, rays).intensities, siddon_adjoint(grid, rays, upstream).values
        numba.set_num_threads(1)
        single = siddon_forward(grid, rays).intensities, siddon_adjoint(grid, rays, upstream).values
    finally:
        numba.set_num_threads(threads)
    assert np.array_equal(reference[0], single[0])
    np.testing.assert_allclose(reference[1], single[1], rtol=1e-12, atol=1e-15)


def test_zero_volume_renders_zero():
    grid = VoxelGrid.centered((6, 6, 6), (1.0, 1.0, 1.0))
    geom = make_circular_orbit(3, detector_rows=4, detector_cols=5, pixel_pitch_u=2.0, pixel_pitch_v=2.0)
    for kind in RendererKind:
        projections = render_projections(grid, geom, kind, 16)
        assert projections.images.shape == (3, 4, 5)
        assert not projections.images.any()


def test_render_projections_follows_ray_order():
    grid = make_phantom("spheres", (12, 12, 12), (1.0, 1.0, 1.0))
    geom = make_circular_orbit(2, detector_rows=3, detector_cols=4, pixel_pitch_u=3.0, pixel_pitch_v=3.0)
    projections = render_projections(grid, geom)
    flat = siddon_forward(grid, ray_bundle(geom)).intensities
    np.testing.assert_array_equal(projections.flat(), flat)


def test_argument_errors():
    grid = _uniform((4, 4, 4), 0.05)
    rays = RayBundle(np.zeros((2, 3)), np.ones((2, 3)))
    with pytest.raises(InvalidArgumentError):
        siddon_adjoint(grid, rays, np.ones(3))
    with pytest.raises(InvalidArgumentError):
        trilinear_forward(grid, rays, 1)
    with pytest.raises(InvalidArgumentError):
        render(grid, rays, "cone")
