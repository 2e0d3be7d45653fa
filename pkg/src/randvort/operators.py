"""Heat semigroup, Biot-Savart law, convolution noise and the vorticity nonlinearity."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .grid import (
    GridSpec,
    SpectralVectorField,
    curl_array,
    forward,
    inverse,
)

ADMISSIBILITY_FACTOR = np.sqrt(12.0) + 3.0


def heat_semigroup(F: SpectralVectorField, t: float) -> SpectralVectorField:
    """e^{t Laplacian} as the multiplier exp(-|k|^2 t)."""
    if not np.isfinite(t) or t < 0:
        raise ValueError(f"heat semigroup needs a finite t >= 0, got {t}")
    if t == 0:
        return SpectralVectorField(F.grid, F.data.copy())
    return SpectralVectorField(F.grid, F.data * np.exp(-F.grid.k2 * t))


def biot_savart_array(data: np.ndarray, grid: GridSpec) -> np.ndarray:
    # K = curl (-Laplacian)^{-1}; the mean mode is dropped
    return curl_array(data, grid) * grid.inv_k2


def biot_savart(U: SpectralVectorField) -> SpectralVectorField:
    """Velocity X = K(U) with X(k) = i k x U(k) / |k|^2 and X(0) = 0."""
    return SpectralVectorField(U.grid, biot_savart_array(U.data, U.grid))


def dealias(F: SpectralVectorField) -> SpectralVectorField:
    return SpectralVectorField(F.grid, F.data * F.grid.dealias_mask)


def nonlinearity_array(U: np.ndarray, grid: GridSpec, dealiased: bool = True) -> np.ndarray:
    """-[(X.grad)U - (U.grad)X] with X = K(U), products formed on the grid."""
    if dealiased:
        U = U * grid.dealias_mask
    X = biot_savart_array(U, grid)
    kvec = grid.k
    sshape = grid.spectral_shape
    # gU[c, j] = D_j U_c
    gU = 1j * np.stack([kvec[j] * U for j in range(3)], axis=1).reshape((9,) + sshape)
    gX = 1j * np.stack([kvec[j] * X for j in range(3)], axis=1).reshape((9,) + sshape)
    phys = inverse(np.concatenate([U, X, gU, gX]), grid)
    u, x = phys[0:3], phys[3:6]
    du = phys[6:15].reshape((3, 3) + grid.physical_shape)
    dxv = phys[15:24].reshape((3, 3) + grid.physical_shape)
    adv = np.einsum("j...,cj...->c...", x, du) - np.einsum("j...,cj...->c...", u, dxv)
    out = -forward(adv)
    if dealiased:
        out *= grid.dealias_mask
    return out


def nonlinearity_M(U: SpectralVectorField, dealiased: bool = True) -> SpectralVectorField:
    """Vorticity nonlinearity M(U) = -[(K(U).grad)U - (U.grad)K(U)], 2/3-rule dealiased."""
    return SpectralVectorField(U.grid, nonlinearity_array(U.data, U.grid, dealiased))


@dataclass(frozen=True)
class KernelSpec:
    """Closed-form radial kernel preset.

    ``gaussian``: mass * (2 pi eps^2)^{-3/2} exp(-|x|^2 / (2 eps^2)).
    ``mollified_dirac``: eps^{-3} rho(x / eps) with rho the unit-mass bump
    exp(-1 / (1 - |x|^2)) supported in the unit ball.
    """

    kind: str
    eps: float
    mass: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "mollified_dirac"):
            raise ValueError(f"unknown kernel preset {self.kind!r}")
        if not self.eps > 0:
            raise ValueError(f"kernel width eps must be positive, got {self.eps}")
        if self.kind == "mollified_dirac" and self.mass != 1.0:
            raise ValueError("mollified_dirac kernels carry unit mass")

    def sample(self, grid: GridSpec) -> np.ndarray:
        """Periodic samples, rescaled so the grid quadrature of h equals ``mass``."""
        r = grid.displacement()
        if self.kind == "gaussian":
            h = np.exp(-(r**2) / (2 * self.eps**2))
        else:
            s = r / self.eps
            h = np.zeros_like(s)
            inside = s < 1
            h[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
            if not inside.any() or h.sum() == 0:
                h[0, 0, 0] = 1.0  # support narrower than a cell: grid Dirac
        total = h.sum() * grid.cell_volume
        return h * (self.mass / total)

    def __str__(self):
        if self.kind == "gaussian":
            return f"gaussian{{eps={self.eps!r}, mass={self.mass!r}}}"
        return f"mollified_dirac{{eps={self.eps!r}}}"

    @classmethod
    def parse(cls, text: str) -> KernelSpec:
        """Parse ``gaussian{eps=0.5, mass=1}`` / ``mollified_dirac{0.3}``."""
        m = re.fullmatch(r"\s*(\w+)\s*\{(.*)\}\s*", text)
        if not m:
            raise ValueError(f"cannot parse kernel {text!r}")
        kind, body = m.group(1), m.group(2)
        names = ["eps", "mass"]
        kw = {}
        for pos, item in enumerate(x for x in body.split(",") if x.strip()):
            if "=" in item:
                key, val = item.split("=", 1)
                key = key.strip()
            else:
                key, val = names[pos], item
            if key not in names:
                raise ValueError(f"unknown kernel parameter {key!r} in {text!r}")
            kw[key] = float(val)
        if "eps" not in kw:
            raise ValueError(f"kernel {text!r} needs eps")
        return cls(kind, **kw)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Convolution noise channels B_i u = h_i * u with amplitudes lambda_i."""

    grid: GridSpec
    kernels: tuple[KernelSpec, ...]
    lambdas: tuple[float, ...]
    l1: np.ndarray = field(init=False)
    symbols: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.kernels) != len(self.lambdas):
            raise ValueError("need one amplitude per kernel")
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        l1, symbols = [], []
        for ker in self.kernels:
            h = ker.sample(self.grid)
            l1.append(np.abs(h).sum() * self.grid.cell_volume)
            # even kernel: the transform is real up to round-off
            symbols.append(np.real(np.fft.rfftn(h)) * self.grid.cell_volume)
        shape = (len(self.kernels),) + self.grid.spectral_shape
        object.__setattr__(self, "l1", np.array(l1, dtype=float))
        object.__setattr__(self, "symbols", np.array(symbols, dtype=float).reshape(shape))

    @classmethod
    def single(cls, grid: GridSpec, kernel: KernelSpec | str, lam: float) -> NoiseModel:
        if isinstance(kernel, str):
            kernel = KernelSpec.parse(kernel)
        return cls(grid, (kernel,), (lam,))

    @classmethod
    def none(cls, grid: GridSpec) -> NoiseModel:
        return cls(grid, (), ())

    @property
    def N(self) -> int:
        return len(self.kernels)

    @property
    def admissible(self) -> np.ndarray:
        """|lambda_i| > (sqrt(12) + 3) |h_i|_1 per channel."""
        return np.abs(np.array(self.lambdas)) > ADMISSIBILITY_FACTOR * self.l1

    @property
    def alpha(self) -> np.ndarray:
        lam = np.abs(np.array(self.lambdas))
        return 0.5 * lam**2 - 1.5 * (self.l1**2 + 2 * lam * self.l1)

    @property
    def shifted_symbols(self) -> np.ndarray:
        """Symbols of B_i + lambda_i I."""
        return self.symbols + np.array(self.lambdas)[:, None, None, None]


def convolution_noise(F: SpectralVectorField, model: NoiseModel, i: int) -> SpectralVectorField:
    """B_i F = h_i * F for channel i (0-based)."""
    if not 0 <= i < model.N:
        raise IndexError(f"channel {i} out of range for {model.N} channels")
    return SpectralVectorField(F.grid, F.data * model.symbols[i])
