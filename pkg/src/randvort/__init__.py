"""Mild solutions of the 3D vorticity equation with convolution-type transport noise."""

from .grid import GridSpec, PhysicalVectorField, SpectralVectorField
from .noise import BrownianPaths, GammaMultiplier, noise_diagnostics, sample_paths
from .operators import KernelSpec, NoiseModel, biot_savart, heat_semigroup, nonlinearity_M
from .solver import SolverConfig, picard_solve

__version__ = "0.1.0"

__all__ = [
    "BrownianPaths",
    "GammaMultiplier",
    "GridSpec",
    "KernelSpec",
    "NoiseModel",
    "PhysicalVectorField",
    "SolverConfig",
    "SpectralVectorField",
    "biot_savart",
    "heat_semigroup",
    "noise_diagnostics",
    "nonlinearity_M",
    "picard_solve",
    "sample_paths",
]
