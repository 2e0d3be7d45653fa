"""Picard construction of the mild solution y = e^{t Lap} U0 + F(y).

F(z)(t) = int_0^t e^{(t-s) Lap} Gamma(s)^{-1} M(Gamma(s) z(s)) ds is discretized
by product integration: on each step the heat multiplier is integrated
exactly per wavenumber against the linear interpolant of the integrand
through the two end nodes.  Because e^{t Lap} is a semigroup, F at all
nodes comes out of a single forward recursion.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .grid import (
    GridSpec,
    PhysicalVectorField,
    SpectralVectorField,
    forward,
    inverse,
    lp_norm_array,
    relative_divergence,
    spectral_inner,
)
from .initial import norm32
from .noise import GammaMultiplier, NoiseDiagnostics
from .operators import biot_savart_array, nonlinearity_array

log = logging.getLogger(__name__)


class SmallnessRefused(RuntimeError):
    def __init__(self, report):
        super().__init__("initial data fails the smallness precheck:\n" + report.text())
        self.report = report


class PicardDivergence(RuntimeError):
    def __init__(self, message, diffs, ratios, diagnosis):
        super().__init__(f"{message} ({diagnosis}); ratios: " + ", ".join(f"{r:.3g}" for r in ratios))
        self.diffs = diffs
        self.ratios = ratios
        self.diagnosis = diagnosis


@dataclass(frozen=True)
class SolverConfig:
    p: float = 1.8
    T: float = 1.0
    M: int = 64
    grading: float = 2.0
    tol: float = 1e-8
    max_iter: int = 12
    C1: float | None = None
    C2: float | None = None
    Cstar: float | None = None
    nonlinear: bool = True

    def __post_init__(self):
        if not 1.5 < self.p < 2:
            raise ValueError(f"p must satisfy 3/2 < p < 2, got {self.p}")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.M) != self.M or self.M < 2:
            raise ValueError(f"need at least 2 time steps, got M = {self.M}")
        if self.grading < 1:
            raise ValueError(f"grading exponent must be >= 1, got {self.grading}")
        if not self.tol > 0 or self.max_iter < 1:
            raise ValueError("picard tolerance must be positive and max_iter >= 1")

    @property
    def q(self) -> float:
        return 1.0 / (2.0 / self.p - 1.0 / 3.0)

    @property
    def r1(self) -> float:
        return 3 * self.p / (3 - self.p)

    @property
    def qprime(self) -> float:
        return 3 * self.p / (4 * self.p - 6)

    @property
    def times(self) -> np.ndarray:
        """Graded nodes T (m/M)^grading, clustered at t = 0."""
        s = np.arange(self.M + 1) / self.M
        t = self.T * s**self.grading
        t[-1] = self.T
        return t

    @property
    def cstar(self) -> float | None:
        """Smallness constant: explicit value, else the largest one the two
        fixed-point conditions allow, min((2 C1 C2)^-1, (4 C1^2)^-1)."""
        if self.Cstar is not None:
            return self.Cstar
        if self.C1 is None or self.C2 is None:
            return None
        return min(1.0 / (2 * self.C1 * self.C2), 1.0 / (4 * self.C1**2))

    def R_star(self, u0_norm: float) -> float:
        return 2 * self.C1 * u0_norm


def kato_exponents(p: float) -> tuple[float, float]:
    return 1 - 3 / (2 * p), 1.5 * (1 - 1 / p)


# ----------------------------------------------------------------------------
# Kato norm bookkeeping


@dataclass(frozen=True, eq=False)
class KatoTrajectory:
    """Weighted norms at the nodes t > 0.

    w0 = t^{1-3/(2p)} |y|_p,  w[i] = t^{(3/2)(1-1/p)} |D_i y|_p.
    """

    times: np.ndarray
    w0: np.ndarray
    w: np.ndarray

    @property
    def znorm(self) -> float:
        if self.times.size == 0:
            return 0.0
        return float(np.max(self.w0[None, :] + self.w))


def node_norms(y: np.ndarray, grid: GridSpec, p: float) -> tuple[float, np.ndarray]:
    """|y|_p and |D_i y|_p for one spectral field array."""
    kx, ky, kz = grid.k
    spec = np.concatenate([y, 1j * kx * y, 1j * ky * y, 1j * kz * y])
    phys = inverse(spec, grid)
    vals = [lp_norm_array(phys[3 * j : 3 * j + 3], grid, p) for j in range(4)]
    return vals[0], np.array(vals[1:])


def kato_trajectory(y: np.ndarray, times: np.ndarray, grid: GridSpec, p: float) -> KatoTrajectory:
    a0, a1 = kato_exponents(p)
    pos = np.flatnonzero(times > 0)
    w0 = np.empty(pos.size)
    w = np.empty((3, pos.size))
    for j, m in enumerate(pos):
        n0, nd = node_norms(y[m], grid, p)
        w0[j] = times[m] ** a0 * n0
        w[:, j] = times[m] ** a1 * nd
    return KatoTrajectory(times[pos], w0, w)


def znorm(y: np.ndarray, times: np.ndarray, grid: GridSpec, p: float) -> float:
    """||y||_{p,inf} = sup_t max_i (t^{1-3/(2p)}|y|_p + t^{(3/2)(1-1/p)}|D_i y|_p) over grid nodes."""
    return kato_trajectory(y, times, grid, p).znorm


# ----------------------------------------------------------------------------
# Duhamel integral


def _phi12(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """phi1(-z) = (1 - e^{-z})/z and phi2(-z) = (z - 1 + e^{-z})/z^2 for z >= 0."""
    small = z < 1e-2
    zs = np.where(small, 1.0, z)
    em = np.expm1(-zs)
    p1 = np.where(small, 1 - z / 2 + z**2 / 6 - z**3 / 24 + z**4 / 120, -em / zs)
    p2 = np.where(small, 0.5 - z / 6 + z**2 / 24 - z**3 / 120 + z**4 / 720, (zs + em) / zs**2)
    return p1, p2


def step_weights(k2: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(e^{-|k|^2 h}, left weight, right weight) of one product-integration step.

    int_0^h e^{-|k|^2 (h-s)} g(s) ds with g linear between g(0) and g(h)
    equals left * g(0) + right * g(h).
    """
    z = k2 * h
    p1, p2 = _phi12(z)
    return np.exp(-z), h * (p1 - p2), h * p2


def duhamel_all(g: np.ndarray, times: np.ndarray, grid: GridSpec) -> np.ndarray:
    """F at every node for an integrand g sampled at the nodes (shape (M+1, 3, ...))."""
    out = np.empty_like(g)
    out[0] = 0
    for m in range(times.size - 1):
        E, wl, wr = step_weights(grid.k2, times[m + 1] - times[m])
        out[m + 1] = E * out[m] + wl * g[m] + wr * g[m + 1]
    return out


def _gamma_symbols(gamma: GammaMultiplier | None, times: np.ndarray, grid: GridSpec):
    if gamma is None or gamma.model.N == 0:
        return None
    idx = [gamma.paths.index(t) for t in times]
    return np.stack([gamma.symbol_at(m) for m in idx])


def integrand(z: np.ndarray, sym: np.ndarray | None, grid: GridSpec) -> np.ndarray:
    """Gamma(s)^{-1} M(Gamma(s) z(s)) at every node."""
    out = np.empty_like(z)
    for m in range(z.shape[0]):
        if sym is None:
            out[m] = nonlinearity_array(z[m], grid)
        else:
            out[m] = nonlinearity_array(z[m] * sym[m], grid) / sym[m]
    return out


def duhamel_F(
    z: Sequence[SpectralVectorField],
    times,
    t: float,
    gamma: GammaMultiplier | None = None,
) -> SpectralVectorField:
    """F(z)(t) for a field history z given at the nodes ``times`` (Gamma = I if no gamma)."""
    times = np.asarray(times, dtype=float)
    if len(z) != times.size:
        raise ValueError("need one field per time node")
    grid = z[0].grid
    z = np.stack([f.data for f in z])
    j = np.flatnonzero(np.abs(times - t) <= 1e-12 * max(1.0, abs(t)))
    if j.size == 0:
        raise ValueError(f"t = {t} is not a grid node")
    j = int(j[0])
    sym = _gamma_symbols(gamma, times[: j + 1], grid)
    g = integrand(z[: j + 1], sym, grid)
    return SpectralVectorField(grid, duhamel_all(g, times[: j + 1], grid)[j])


# ----------------------------------------------------------------------------
# Smallness


@dataclass(frozen=True)
class Inequality:
    name: str
    eta_kind: str
    lhs: float
    rhs: float
    strict: bool

    @property
    def passed(self) -> bool:
        return self.lhs < self.rhs if self.strict else self.lhs <= self.rhs

    @property
    def margin(self) -> float:
        if self.lhs == 0:
            return math.inf
        return self.rhs / self.lhs


@dataclass(frozen=True)
class SmallnessReport:
    u0_norm: float
    eta_inf: dict
    constants: dict
    beta_constants: tuple[float, float]
    checks: tuple[Inequality, ...]

    def passed(self, eta_kind: str = "l2") -> bool:
        rows = [c for c in self.checks if c.eta_kind == eta_kind]
        return bool(rows) and all(c.passed for c in rows)

    def text(self) -> str:
        lines = [
            f"|U0|_3/2 = {self.u0_norm:.17g}",
            f"eta_inf (l2 surrogate) = {self.eta_inf['l2']:.17g}",
            f"eta_inf (analytic bound) = {self.eta_inf['analytic']:.17g}",
        ]
        for k, v in self.constants.items():
            lines.append(f"{k} = {v if v is None else format(v, '.17g')}")
        lines.append(f"beta constants = {self.beta_constants[0]:.17g}, {self.beta_constants[1]:.17g}")
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            op = "<" if c.strict else "<="
            lines.append(f"{c.name} [{c.eta_kind}]: {c.lhs:.6e} {op} {c.rhs:.6e} {status} margin={c.margin:.6g}")
        return "\n".join(lines) + "\n"


def smallness_check(u0_norm: float, diag: NoiseDiagnostics, cfg: SolverConfig) -> SmallnessReport:
    """Evaluate the three smallness inequalities with both eta evaluations.

    sup eta |U0| <= C*,  |U0| eta_inf <= 1/(4 C1^2),  2 C1 C2 eta_inf |U0| < 1.
    Inequalities needing an uncalibrated constant are omitted.
    """
    checks = []
    cstar = cfg.cstar
    eta_inf = {"l2": diag.eta_inf_exact, "analytic": diag.eta_inf_analytic}
    for kind, e in eta_inf.items():
        if cstar is not None:
            checks.append(Inequality("sup eta |U0|_3/2 <= C*", kind, e * u0_norm, cstar, False))
        if cfg.C1 is not None:
            checks.append(Inequality("|U0|_3/2 eta_inf <= 1/(4 C1^2)", kind, e * u0_norm, 1 / (4 * cfg.C1**2), False))
        if cfg.C1 is not None and cfg.C2 is not None:
            checks.append(Inequality("2 C1 C2 eta_inf |U0|_3/2 < 1", kind, 2 * cfg.C1 * cfg.C2 * e * u0_norm, 1.0, True))
    return SmallnessReport(
        u0_norm=u0_norm,
        eta_inf=eta_inf,
        constants={"C1": cfg.C1, "C2": cfg.C2, "C*": cstar},
        beta_constants=beta_constant(cfg.p),
        checks=tuple(checks),
    )


def threshold(diag: NoiseDiagnostics, cfg: SolverConfig, eta_kind: str = "l2") -> float:
    """Largest |U0|_{3/2} allowed by sup eta |U0| <= C*."""
    if cfg.cstar is None:
        raise ValueError("threshold needs calibrated constants")
    return cfg.cstar / diag.eta_inf(eta_kind)


def beta_constant(p: float) -> tuple[float, float]:
    """B(3/p - 3/2, 3/2 - 3/(2p)) and B(3/p - 3/2, 1 - 3/(2p)); inf where an argument is <= 0."""

    def beta(a, b):
        if a <= 0 or b <= 0:
            return math.inf
        return math.exp(math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))

    a = 1.5 * (2 / p - 1)
    return beta(a, 1.5 * (1 - 1 / p)), beta(3 * (1 / p - 0.5), 1 - 3 / (2 * p))


# ----------------------------------------------------------------------------
# Picard iteration


@dataclass(frozen=True, eq=False)
class SolutionRecord:
    grid: GridSpec
    cfg: SolverConfig
    times: np.ndarray
    y: np.ndarray
    u0: SpectralVectorField
    gamma: GammaMultiplier | None
    kato: KatoTrajectory
    diffs: tuple[float, ...]
    ratios: tuple[float, ...]
    residual: np.ndarray
    mild_residual: float
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.diffs)

    def _sym(self, m, inverse=False):
        if self.gamma is None or self.gamma.model.N == 0:
            return 1.0
        return self.gamma.symbol(self.times[m], inverse)

    def y_at(self, m: int) -> SpectralVectorField:
        return SpectralVectorField(self.grid, self.y[m])

    def U_at(self, m: int) -> SpectralVectorField:
        """Vorticity U(t_m) = Gamma(t_m) y(t_m)."""
        return SpectralVectorField(self.grid, self.y[m] * self._sym(m))

    def X_at(self, m: int) -> SpectralVectorField:
        """Velocity X(t_m) = K(U(t_m))."""
        return SpectralVectorField(self.grid, biot_savart_array(self.y[m] * self._sym(m), self.grid))

    def max_relative_divergence(self) -> dict[str, float]:
        out = {"y": 0.0, "U": 0.0, "X": 0.0}
        for m in range(self.times.size):
            out["y"] = max(out["y"], relative_divergence(self.y_at(m)))
            out["U"] = max(out["U"], relative_divergence(self.U_at(m)))
            out["X"] = max(out["X"], relative_divergence(self.X_at(m)))
        return out

    @property
    def max_residual(self) -> float:
        return float(np.nanmax(self.residual)) if self.residual.size else 0.0


def heat_history(u0: np.ndarray, times: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.stack([u0 * np.exp(-grid.k2 * t) for t in times])


def picard_iterate(
    lin: np.ndarray,
    times: np.ndarray,
    sym,
    grid: GridSpec,
    p: float,
    tol: float,
    max_iter: int,
    nonlinear: bool = True,
    callback: Callable | None = None,
):
    """Run y^{k+1} = lin + F(y^k) from y^0 = lin; returns (y, diffs, ratios, converged)."""
    y = lin.copy()
    diffs, ratios = [], []
    converged = False
    for k in range(1, max_iter + 1):
        if nonlinear:
            y_new = lin + duhamel_all(integrand(y, sym, grid), times, grid)
        else:
            y_new = lin.copy()
        diff = znorm(y_new - y, times, grid, p)
        size = znorm(y, times, grid, p)
        if diffs:
            ratios.append(diff / diffs[-1] if diffs[-1] > 0 else 0.0)
        diffs.append(diff)
        if callback is not None:
            callback(k, diff, size)
        log.debug("picard iteration %d: diff %.3e size %.3e", k, diff, size)
        y = y_new
        if not np.isfinite(diff):
            break
        if diff <= tol * size:
            converged = True
            break
    return y, diffs, ratios, converged


def _diagnose(lin, times, sym, grid, cfg, ratios) -> str:
    """Compare the tail contraction ratio against a run on every other node."""
    coarse = slice(None, None, 2)
    if times[coarse][-1] != times[-1] or len(ratios) < 2:
        return "too-large data" if ratios and ratios[-1] >= 1 else "undetermined"
    n_iter = min(len(ratios) + 1, 6)
    _, _, r_coarse, _ = picard_iterate(
        lin[coarse], times[coarse], None if sym is None else sym[coarse], grid, cfg.p, 0.0, n_iter, cfg.nonlinear
    )
    fine = ratios[min(len(ratios), n_iter - 1) - 1]
    if not r_coarse:
        return "undetermined"
    coarse_r = r_coarse[-1]
    if abs(coarse_r - fine) > 0.25 * max(abs(fine), 1e-30):
        return "quadrature too coarse"
    return "too-large data"


def picard_solve(
    U0: SpectralVectorField,
    gamma: GammaMultiplier | None,
    cfg: SolverConfig,
    diag: NoiseDiagnostics | None = None,
    override: bool = False,
    callback: Callable | None = None,
) -> SolutionRecord:
    """Fixed point of y = e^{t Lap} U0 + F(y) on the graded grid of ``cfg``.

    Stops when ||y^{k+1} - y^k||_{p,inf} <= tol ||y^k||_{p,inf}.  Raises
    SmallnessRefused when the precheck fails without ``override`` and
    PicardDivergence when max_iter is exhausted.
    """
    grid = U0.grid
    times = cfg.times
    u0_norm = norm32(U0)
    if not override and u0_norm > 0:
        if diag is None:
            raise ValueError("smallness precheck needs noise diagnostics (or override=True)")
        report = smallness_check(u0_norm, diag, cfg)
        if not report.passed("l2"):
            raise SmallnessRefused(report)

    sym = _gamma_symbols(gamma, times, grid)
    lin = heat_history(U0.data, times, grid)
    y, diffs, ratios, converged = picard_iterate(
        lin, times, sym, grid, cfg.p, cfg.tol, cfg.max_iter, cfg.nonlinear, callback
    )
    if not converged:
        diagnosis = _diagnose(lin, times, sym, grid, cfg, ratios)
        raise PicardDivergence(f"no convergence in {cfg.max_iter} iterations", diffs, ratios, diagnosis)

    residual, mild = _residuals(y, lin, U0.data, sym, times, grid, cfg)
    return SolutionRecord(
        grid=grid,
        cfg=cfg,
        times=times,
        y=y,
        u0=U0,
        gamma=gamma,
        kato=kato_trajectory(y, times, grid, cfg.p),
        diffs=tuple(diffs),
        ratios=tuple(ratios),
        residual=residual,
        mild_residual=mild,
        converged=converged,
    )


def _residuals(y, lin, u0, sym, times, grid, cfg):
    """Relative residual of the vorticity form and Z_p residual of y = G(y)."""
    s = np.ones((times.size,) + (1,) * 3) if sym is None else sym
    U = y * s[:, None]
    if cfg.nonlinear:
        h = np.stack([nonlinearity_array(U[m], grid) for m in range(times.size)]) / s[:, None]
        D = duhamel_all(h, times, grid)
    else:
        D = np.zeros_like(y)
    res = np.empty(times.size)
    for m, t in enumerate(times):
        R = U[m] - np.exp(-grid.k2 * t) * s[m] * u0 - s[m] * D[m]
        den = math.sqrt(max(spectral_inner(U[m], U[m], grid), 0.0))
        num = math.sqrt(max(spectral_inner(R, R, grid), 0.0))
        res[m] = num / den if den > 0 else (0.0 if num == 0 else math.inf)
    size = znorm(y, times, grid, cfg.p)
    mild = znorm(y - lin - D, times, grid, cfg.p) / size if size > 0 else 0.0
    return res, mild


# ----------------------------------------------------------------------------
# Diagnostics on a converged record


def weak_pairing(y, phi, grid: GridSpec | None = None) -> np.ndarray:
    """int y(t, x) . phi(x) dx at each node; ``y`` is a record or an array of coefficients."""
    if isinstance(y, SolutionRecord):
        grid, data = y.grid, y.y
    else:
        data = np.asarray(y)
        if grid is None:
            raise ValueError("grid required for raw coefficient arrays")
    if isinstance(phi, PhysicalVectorField):
        phi_hat = forward(phi.data)
    else:
        phi_hat = phi.data
    return np.array([spectral_inner(data[m], phi_hat, grid) for m in range(data.shape[0])])


@dataclass(frozen=True, eq=False)
class VelocityReport:
    times: np.ndarray
    ratio_X: np.ndarray
    ratio_DX: np.ndarray
    ratio_DDX: np.ndarray
    weighted_X: np.ndarray
    weighted_DX: np.ndarray
    skipped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def maxima(self) -> dict[str, float]:
        ok = ~self.skipped
        if not ok.any():
            return {"X": math.nan, "DX": math.nan, "DDX": math.nan}
        return {
            "X": float(np.max(self.ratio_X[ok])),
            "DX": float(np.max(self.ratio_DX[:, ok])),
            "DDX": float(np.max(self.ratio_DDX[:, :, ok])),
        }


def velocity_ratios(U: np.ndarray, grid: GridSpec, p: float) -> tuple[float, np.ndarray, np.ndarray, float, np.ndarray]:
    """|X|_{r1}/|U|_p, |D_i X|_p/|U|_p, |D_i D_j X|_p/|D_i U|_p for X = K(U); also |X|_{r1}, |D_i X|_p."""
    r1 = 3 * p / (3 - p)
    kv = grid.k
    X = biot_savart_array(U, grid)
    spec = [U, X] + [1j * kv[i] * X for i in range(3)] + [1j * kv[i] * U for i in range(3)]
    spec += [-kv[i] * kv[j] * X for i in range(3) for j in range(3)]
    phys = inverse(np.concatenate(spec), grid)
    blocks = [phys[3 * b : 3 * b + 3] for b in range(len(spec))]
    nU = lp_norm_array(blocks[0], grid, p)
    nX = lp_norm_array(blocks[1], grid, r1)
    nDX = np.array([lp_norm_array(blocks[2 + i], grid, p) for i in range(3)])
    nDU = np.array([lp_norm_array(blocks[5 + i], grid, p) for i in range(3)])
    nDDX = np.array([[lp_norm_array(blocks[8 + 3 * i + j], grid, p) for j in range(3)] for i in range(3)])
    if nU == 0:
        return math.nan, np.full(3, math.nan), np.full((3, 3), math.nan), nX, nDX
    with np.errstate(divide="ignore", invalid="ignore"):
        rDDX = np.where(nDU[:, None] > 0, nDDX / nDU[:, None], math.nan)
    return nX / nU, nDX / nU, rDDX, nX, nDX


def velocity_diagnostics(rec: SolutionRecord, stride: int = 1) -> VelocityReport:
    """Ratio time series for X = K(U) plus the Kato-weighted velocity norms."""
    p = rec.cfg.p
    a0, a1 = kato_exponents(p)
    idx = [m for m in range(0, rec.times.size, stride) if rec.times[m] > 0]
    n = len(idx)
    rX, rDX, rDDX = np.empty(n), np.empty((3, n)), np.empty((3, 3, n))
    wX, wDX = np.empty(n), np.empty((3, n))
    skipped = np.zeros(n, dtype=bool)
    for j, m in enumerate(idx):
        t = rec.times[m]
        a, b, c, nX, nDX = velocity_ratios(rec.U_at(m).data, rec.grid, p)
        rX[j], rDX[:, j], rDDX[:, :, j] = a, b, c
        wX[j], wDX[:, j] = t**a0 * nX, t**a1 * nDX
        skipped[j] = not np.isfinite(a)
    return VelocityReport(rec.times[idx], rX, rDX, rDDX, wX, wDX, skipped)


# ----------------------------------------------------------------------------
# Calibration of the empirical constants


@dataclass(frozen=True)
class CalibrationSample:
    seed: int
    shape: str
    u0_norm: float
    eta_inf: float
    linear_ratio: float
    quadratic_ratio: float
    contraction: float


@dataclass(frozen=True)
class Calibration:
    C1: float
    C2: float
    Cstar: float
    samples: tuple[CalibrationSample, ...]

    def text(self) -> str:
        lines = [f"C1 = {self.C1:.17g}", f"C2 = {self.C2:.17g}", f"Cstar = {self.Cstar:.17g}"]
        lines.append("seed,shape,u0_norm32,eta_inf,linear_ratio,quadratic_ratio,contraction")
        for s in self.samples:
            lines.append(
                f"{s.seed},{s.shape},{s.u0_norm:.17g},{s.eta_inf:.17g},{s.linear_ratio:.17g},"
                f"{s.quadratic_ratio:.17g},{s.contraction:.17g}"
            )
        return "\n".join(lines) + "\n"


def calibrate(
    shapes: dict[str, SpectralVectorField],
    gammas: Sequence[tuple[int, GammaMultiplier, NoiseDiagnostics]],
    cfg: SolverConfig,
    sizes: Sequence[float],
    eta_kind: str = "l2",
    iterations: int = 4,
) -> Calibration:
    """Fit C1, C2 from sweeps over data shapes, noise paths and data sizes.

    C1 bounds both ||e^{t Lap} U0|| / |U0|_3/2 and ||F(z)|| / (eta_inf ||z||^2);
    C2 bounds the observed contraction ratio divided by eta_inf R*, R* = 2 C1 |U0|_3/2.
    """
    times = cfg.times
    samples = []
    for seed, gamma, diag in gammas:
        e_inf = diag.eta_inf(eta_kind)
        sym = _gamma_symbols(gamma, times, gamma.grid)
        for name, shape in shapes.items():
            grid = shape.grid
            unit = shape * (1.0 / norm32(shape))
            for s in sizes:
                lin = heat_history(unit.data * s, times, grid)
                z0 = znorm(lin, times, grid, cfg.p)
                F0 = duhamel_all(integrand(lin, sym, grid), times, grid)
                quad = znorm(F0, times, grid, cfg.p) / (e_inf * z0**2)
                _, diffs, ratios, _ = picard_iterate(lin, times, sym, grid, cfg.p, 0.0, iterations)
                rho = max(ratios) if ratios else 0.0
                samples.append(CalibrationSample(seed, name, s, e_inf, z0 / s, quad, rho))
    C1 = max(max(x.linear_ratio, x.quadratic_ratio) for x in samples)
    C2 = max(x.contraction / (x.eta_inf * 2 * C1 * x.u0_norm) for x in samples)
    cfg2 = replace(cfg, C1=C1, C2=C2, Cstar=None)
    return Calibration(C1, C2, cfg2.cstar, tuple(samples))
