"""Initial vorticity presets and random field ensembles."""

from __future__ import annotations

import numpy as np

from .grid import GridSpec, PhysicalVectorField, SpectralVectorField, curl_array, forward, inverse, lp_norm_array

PRESETS = ("taylor_green", "shear", "random")


def leray_project(data: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Remove the gradient part: F - k (k . F) / |k|^2."""
    kx, ky, kz = grid.k
    kdot = kx * data[0] + ky * data[1] + kz * data[2]
    return data - np.stack(np.broadcast_arrays(kx, ky, kz)) * (kdot * grid.inv_k2)


def random_field(
    grid: GridSpec,
    rng: np.random.Generator,
    kmax: float | None = None,
    solenoidal: bool = True,
    mean_zero: bool = True,
) -> SpectralVectorField:
    """Band-limited white noise: flat spectrum for |k| <= kmax (in units of 2 pi / L).

    Built from real Gaussian samples so Hermitian symmetry is exact.
    ``kmax=None`` keeps everything inside the 2/3-rule band.
    """
    data = forward(rng.standard_normal((3,) + grid.physical_shape))
    if kmax is None:
        data = data * grid.dealias_mask
    else:
        kk = np.sqrt(grid.k2) * grid.L / (2 * np.pi)
        data = data * (kk <= kmax) * grid.dealias_mask
    if solenoidal:
        data = leray_project(data, grid)
    if mean_zero:
        data[:, 0, 0, 0] = 0
    return SpectralVectorField(grid, data)


def shear(grid: GridSpec) -> SpectralVectorField:
    """(0, sin(2 pi x_1 / L), 0)."""
    X, _, _ = grid.coordinates()
    f = np.zeros((3,) + grid.physical_shape)
    f[1] = np.sin(2 * np.pi * X / grid.L)
    return SpectralVectorField(grid, forward(f))


def taylor_green_velocity(grid: GridSpec) -> SpectralVectorField:
    X, Y, Z = (2 * np.pi / grid.L * c for c in grid.coordinates())
    f = np.zeros((3,) + grid.physical_shape)
    f[0] = np.sin(X) * np.cos(Y) * np.cos(Z)
    f[1] = -np.cos(X) * np.sin(Y) * np.cos(Z)
    return SpectralVectorField(grid, forward(f))


def taylor_green(grid: GridSpec) -> SpectralVectorField:
    """Vorticity of the Taylor-Green velocity (single |k|^2 = 3 shell)."""
    v = taylor_green_velocity(grid)
    return SpectralVectorField(grid, curl_array(v.data, grid))


def norm32(F: SpectralVectorField) -> float:
    """|F|_{3/2} on the grid."""
    return lp_norm_array(inverse(F.data, F.grid), F.grid, 1.5)


def rescale(F: SpectralVectorField, target: float) -> SpectralVectorField:
    """Scale F so that |F|_{3/2} = target."""
    current = norm32(F)
    if target == 0:
        return SpectralVectorField(F.grid, np.zeros_like(F.data))
    if current == 0:
        raise ValueError("cannot rescale the zero field to a nonzero norm")
    return F * (target / current)


def initial_vorticity(preset: str, grid: GridSpec, seed: int = 0, band: float = 4.0) -> SpectralVectorField:
    """Unit-|.|_{3/2} initial vorticity of the named preset."""
    if preset == "taylor_green":
        F = taylor_green(grid)
    elif preset == "shear":
        F = shear(grid)
    elif preset == "random":
        F = random_field(grid, np.random.default_rng(seed), kmax=band)
    else:
        raise ValueError(f"unknown initial-data preset {preset!r}; choose from {PRESETS}")
    return rescale(F, 1.0)


def physical(F: SpectralVectorField) -> PhysicalVectorField:
    return PhysicalVectorField(F.grid, inverse(F.data, F.grid))
