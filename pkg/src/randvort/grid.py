"""Periodic-box spectral fields.

Fields live on the box [0, L)^3 sampled at n points per axis.  Spectral
coefficients use the real-to-complex layout (last axis holds the
non-negative wavenumbers only), so Hermitian symmetry of a real field is
carried by the storage format itself.

Normalization: the forward transform divides by n^3, so the k = 0
coefficient is the spatial mean and a single Fourier mode cos(k.x) shows up
as two coefficients of value 1/2.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

SNAPSHOT_MAGIC = b"VMF1"


@dataclass(frozen=True)
class GridSpec:
    n: int = 32
    L: float = 2 * np.pi

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8 or self.n % 2:
            raise ValueError(f"grid size n must be an even integer >= 8, got {self.n}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"box length L must be positive, got {self.L}")

    @property
    def physical_shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n // 2 + 1)

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.dx**3

    @cached_property
    def mode_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer mode numbers per axis, broadcastable to the spectral shape."""
        full = np.fft.fftfreq(self.n, 1.0 / self.n).astype(int)
        # fftfreq puts the unpaired Nyquist index at -n/2; report it as +n/2
        full[self.n // 2] = self.n // 2
        half = np.arange(self.n // 2 + 1)
        return (full[:, None, None], full[None, :, None], half[None, None, :])

    @cached_property
    def k(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Wavenumbers used by every derivative multiplier.

        The Nyquist wavenumber has no partner of opposite sign, so it is set
        to zero; this keeps i*k_j odd under index reflection and derivatives
        of real fields real.
        """
        out = []
        for m in self.mode_index:
            kk = (2 * np.pi / self.L) * m.astype(float)
            kk = np.where(np.abs(m) == self.n // 2, 0.0, kk)
            out.append(kk)
        return tuple(out)

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky, kz = self.k
        return kx**2 + ky**2 + kz**2

    @cached_property
    def inv_k2(self) -> np.ndarray:
        k2 = self.k2
        with np.errstate(divide="ignore"):
            return np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3 rule: keep modes with every |mode index| <= n/3."""
        cut = self.n / 3
        mx, my, mz = self.mode_index
        return (np.abs(mx) <= cut) & (np.abs(my) <= cut) & (np.abs(mz) <= cut)

    @cached_property
    def hermitian_weight(self) -> np.ndarray:
        """Multiplicity of each stored coefficient in the full spectrum."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return np.broadcast_to(w[None, None, :], self.spectral_shape)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.arange(self.n) * self.dx
        return np.meshgrid(x, x, x, indexing="ij")

    def displacement(self) -> np.ndarray:
        """Minimum-image distance from the origin at each grid point."""
        m = np.fft.fftfreq(self.n, 1.0 / self.n) * self.dx
        X, Y, Z = np.meshgrid(m, m, m, indexing="ij")
        return np.sqrt(X**2 + Y**2 + Z**2)


@dataclass(frozen=True, eq=False)
class PhysicalVectorField:
    """Three real components sampled on the grid, shape (3, n, n, n)."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape != (3,) + self.grid.physical_shape:
            raise ValueError(f"expected shape {(3,) + self.grid.physical_shape}, got {data.shape}")
        object.__setattr__(self, "data", data)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.data**2, axis=0))

    def __add__(self, other):
        return PhysicalVectorField(self.grid, self.data + other.data)

    def __sub__(self, other):
        return PhysicalVectorField(self.grid, self.data - other.data)

    def __mul__(self, c):
        return PhysicalVectorField(self.grid, self.data * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SpectralVectorField:
    """Fourier-series coefficients of a real vector field, shape (3, n, n, n//2+1)."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.shape != (3,) + self.grid.spectral_shape:
            raise ValueError(f"expected shape {(3,) + self.grid.spectral_shape}, got {data.shape}")
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, grid: GridSpec) -> SpectralVectorField:
        return cls(grid, np.zeros((3,) + grid.spectral_shape, dtype=complex))

    def __add__(self, other):
        return SpectralVectorField(self.grid, self.data + other.data)

    def __sub__(self, other):
        return SpectralVectorField(self.grid, self.data - other.data)

    def __neg__(self):
        return SpectralVectorField(self.grid, -self.data)

    def __mul__(self, c):
        return SpectralVectorField(self.grid, self.data * c)

    __rmul__ = __mul__

    def l2_norm(self) -> float:
        """Continuum L^2 norm via Parseval (equals lp_norm(to_physical(F), 2))."""
        return float(np.sqrt(spectral_inner(self.data, self.data, self.grid)))


def forward(data: np.ndarray) -> np.ndarray:
    """rfftn over the last three axes with 1/n^3 normalization."""
    return sfft.rfftn(data, axes=(-3, -2, -1), norm="forward")


def inverse(data: np.ndarray, grid: GridSpec) -> np.ndarray:
    return sfft.irfftn(data, s=grid.physical_shape, axes=(-3, -2, -1), norm="forward")


def to_spectral(f: PhysicalVectorField) -> SpectralVectorField:
    if not np.all(np.isfinite(f.data)):
        raise ValueError("field contains non-finite values")
    return SpectralVectorField(f.grid, forward(f.data))


def to_physical(F: SpectralVectorField) -> PhysicalVectorField:
    if not np.all(np.isfinite(F.data)):
        raise ValueError("coefficients contain non-finite values")
    return PhysicalVectorField(F.grid, inverse(F.data, F.grid))


def spectral_inner(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> float:
    """Continuum inner product over the box of two real fields from their coefficients."""
    s = np.sum(grid.hermitian_weight * np.real(a * np.conj(b)))
    return float(s * grid.L**3)


def partial_derivative(F: SpectralVectorField, axis: int) -> SpectralVectorField:
    """D_axis for axis in {1, 2, 3}."""
    if axis not in (1, 2, 3):
        raise ValueError(f"axis must be 1, 2 or 3, got {axis}")
    return SpectralVectorField(F.grid, 1j * F.grid.k[axis - 1] * F.data)


def curl_array(data: np.ndarray, grid: GridSpec) -> np.ndarray:
    kx, ky, kz = grid.k
    a0, a1, a2 = data
    return 1j * np.stack([ky * a2 - kz * a1, kz * a0 - kx * a2, kx * a1 - ky * a0])


def divergence_array(data: np.ndarray, grid: GridSpec) -> np.ndarray:
    kx, ky, kz = grid.k
    return 1j * (kx * data[0] + ky * data[1] + kz * data[2])


def curl(F: SpectralVectorField) -> SpectralVectorField:
    return SpectralVectorField(F.grid, curl_array(F.data, F.grid))


def divergence(F: SpectralVectorField) -> np.ndarray:
    """Scalar spectral field i k . F(k)."""
    return divergence_array(F.data, F.grid)


def relative_divergence(F: SpectralVectorField | np.ndarray, grid: GridSpec | None = None) -> float:
    """|div F|_2 / |grad F|_2, zero for a field without gradients."""
    if isinstance(F, SpectralVectorField):
        grid, data = F.grid, F.data
    else:
        data = F
    div = divergence_array(data, grid)
    num = np.sum(grid.hermitian_weight * np.abs(div) ** 2)
    den = np.sum(grid.hermitian_weight * grid.k2 * np.sum(np.abs(data) ** 2, axis=0))
    if den == 0:
        return 0.0
    return float(np.sqrt(num / den))


def lp_norm_array(data: np.ndarray, grid: GridSpec, p: float) -> float:
    """Midpoint-rule L^p norm of a physical vector field array (3, n, n, n)."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    mag = np.sqrt(np.einsum("i...,i...->...", data, data))
    if np.isinf(p):
        return float(mag.max())
    if p == 2:
        return float(np.sqrt(np.sum(mag**2) * grid.cell_volume))
    return float((np.sum(mag**p) * grid.cell_volume) ** (1.0 / p))


def lp_norm(f: PhysicalVectorField, p: float) -> float:
    """(sum |f|^p (L/n)^3)^(1/p) with |f| the Euclidean magnitude; p = inf gives the max."""
    return lp_norm_array(f.data, f.grid, p)


def write_snapshot(path: str | Path, f: PhysicalVectorField) -> None:
    """VMF1: magic, n (u64 LE), L (f64 LE), then 3 n^3 f64 LE values, component-major, xi_3 fastest."""
    header = SNAPSHOT_MAGIC + struct.pack("<Qd", f.grid.n, f.grid.L)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.data, dtype="<f8").tobytes())


def read_snapshot(path: str | Path) -> PhysicalVectorField:
    raw = Path(path).read_bytes()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a VMF1 snapshot")
    n, L = struct.unpack("<Qd", raw[4:20])
    grid = GridSpec(int(n), float(L))
    body = np.frombuffer(raw, dtype="<f8", offset=20)
    if body.size != 3 * n**3:
        raise ValueError(f"{path}: expected {3 * n**3} values, found {body.size}")
    return PhysicalVectorField(grid, body.reshape((3,) + grid.physical_shape).astype(float))
