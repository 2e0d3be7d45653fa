"""Brownian paths, the random transform Gamma(t) and its size diagnostics.

Gamma(t) = prod_i exp(beta_i(t) Bt_i - t/2 Bt_i^2) with Bt_i = B_i + lambda_i I.
Every factor is a Fourier multiplier, so Gamma(t) is the pointwise symbol

    gamma(t, k) = exp(sum_i beta_i(t) b_i(k) - t/2 b_i(k)^2),  b_i = h_i^(k) + lambda_i,

evaluated only at times where the path was sampled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import SpectralVectorField
from .operators import NoiseModel


def philox(seed: int) -> np.random.Generator:
    """Counter-based generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) % 2**64))


def path_seed(seed: int, index: int) -> int:
    """Per-sample seed: first 64 bits of SeedSequence((seed, index)).

    Depends only on (seed, index), so Monte-Carlo output does not depend on
    how samples are spread over workers.
    """
    state = np.random.SeedSequence([int(seed) % 2**64, int(index)]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


@dataclass(frozen=True, eq=False)
class BrownianPaths:
    """beta_i(t_m) for channels i and grid times t_m, values shape (N, M+1)."""

    seed: int | None
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        if times.ndim != 1 or times[0] != 0 or np.any(np.diff(times) <= 0):
            raise ValueError("time grid must start at 0 and increase strictly")
        if values.shape[1] != times.size:
            raise ValueError("one value per grid time is required")
        if values.size and np.any(values[:, 0] != 0):
            raise ValueError("Brownian paths start at 0")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    def index(self, t: float) -> int:
        j = int(np.searchsorted(self.times, t - 1e-12 * max(1.0, abs(t))))
        if j >= self.times.size or abs(self.times[j] - t) > 1e-12 * max(1.0, abs(t)):
            raise ValueError(f"t = {t} is not a node of the path grid")
        return j

    def restrict(self, times) -> BrownianPaths:
        """The same realization observed on a subset of its grid."""
        idx = [self.index(t) for t in np.asarray(times, dtype=float)]
        return BrownianPaths(self.seed, self.times[idx], self.values[:, idx])


def sample_paths(seed: int, times, N: int) -> BrownianPaths:
    """Independent standard Brownian motions on ``times`` (starting at 0).

    Increments are drawn channel-major from ``philox(seed)``.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or times[0] != 0 or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must start at 0 and increase strictly")
    rng = philox(seed)
    z = rng.standard_normal((N, times.size - 1))
    steps = z * np.sqrt(np.diff(times))
    values = np.concatenate([np.zeros((N, 1)), np.cumsum(steps, axis=1)], axis=1)
    return BrownianPaths(seed, times, values)


class GammaMultiplier:
    """Symbol of Gamma(t) and Gamma(t)^{-1} on the path grid."""

    def __init__(self, model: NoiseModel, paths: BrownianPaths):
        if model.N != paths.N:
            raise ValueError(f"noise model has {model.N} channels, paths have {paths.N}")
        self.model = model
        self.paths = paths
        self._b = model.shifted_symbols
        # distinct symbol tuples: enough for sup/inf over k
        flat = self._b.reshape(model.N, -1)
        self._b_unique = np.unique(flat, axis=1) if model.N else np.zeros((0, 1))

    @property
    def grid(self):
        return self.model.grid

    @property
    def times(self) -> np.ndarray:
        return self.paths.times

    def exponent(self, t: float) -> np.ndarray:
        return self._exponent_at(self.paths.index(t), self._b)

    def _exponent_at(self, m: int, b: np.ndarray) -> np.ndarray:
        t = self.paths.times[m]
        out = np.zeros(b.shape[1:])
        for i in range(self.model.N):
            beta = self.paths.values[i, m]
            out += beta * b[i] - 0.5 * t * b[i] ** 2
        return out

    def symbol(self, t: float, inverse: bool = False) -> np.ndarray:
        e = self.exponent(t)
        return np.exp(-e if inverse else e)

    def symbol_at(self, m: int, inverse: bool = False) -> np.ndarray:
        e = self._exponent_at(m, self._b)
        return np.exp(-e if inverse else e)

    def exponent_range(self, m: int) -> tuple[float, float]:
        e = self._exponent_at(m, self._b_unique)
        return float(e.min()), float(e.max())


def gamma_apply(G: GammaMultiplier, t: float, F: SpectralVectorField, inverse: bool = False) -> SpectralVectorField:
    """Gamma(t) F, or Gamma(t)^{-1} F when ``inverse``."""
    return SpectralVectorField(F.grid, F.data * G.symbol(t, inverse))


def _check_p(p):
    if not 1.5 < p < 2:
        raise ValueError(f"eta is defined here for 3/2 < p < 2, got {p}")


def eta_analytic(model: NoiseModel, beta: np.ndarray, t) -> np.ndarray:
    """prod_i exp(3 |beta_i| (|h_i|_1 + |lambda_i|) - t alpha_i)."""
    beta = np.asarray(beta, dtype=float).reshape(model.N, -1)
    t = np.asarray(t, dtype=float)
    lam = np.abs(np.array(model.lambdas))
    expo = np.zeros(beta.shape[1])
    for i in range(model.N):
        expo += 3 * np.abs(beta[i]) * (model.l1[i] + lam[i]) - t * model.alpha[i]
    return np.exp(expo)


def eta(G: GammaMultiplier, t: float, p: float) -> tuple[float, float]:
    """(L^2 multiplier surrogate, analytic bound) for eta(t).

    The surrogate is sup|gamma| * sup|gamma| * sup|1/gamma|, the product of
    the three operator norms measured on L^2.
    """
    _check_p(p)
    m = G.paths.index(t)
    lo, hi = G.exponent_range(m)
    exact = math.exp(2 * hi - lo)
    bound = float(eta_analytic(G.model, G.paths.values[:, m], G.paths.times[m])[0])
    return exact, bound


@dataclass(frozen=True, eq=False)
class NoiseDiagnostics:
    times: np.ndarray
    eta_exact: np.ndarray
    eta_analytic: np.ndarray
    alpha: np.ndarray
    gamma_const: float
    beta: np.ndarray

    @property
    def eta_inf_exact(self) -> float:
        return float(self.eta_exact.max())

    @property
    def eta_inf_analytic(self) -> float:
        return float(self.eta_analytic.max())

    def eta_inf(self, kind: str = "l2") -> float:
        if kind == "l2":
            return self.eta_inf_exact
        if kind == "analytic":
            return self.eta_inf_analytic
        raise ValueError(f"unknown eta kind {kind!r}")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "eta_exact_l2", "eta_analytic"] + [f"beta_{i + 1}" for i in range(self.beta.shape[0])])
            for m, t in enumerate(self.times):
                row = [t, self.eta_exact[m], self.eta_analytic[m]] + list(self.beta[:, m])
                w.writerow([fmt(x) for x in row])


def fmt(x: float) -> str:
    """Fixed 17-significant-digit rendering used by every CSV writer."""
    return f"{float(x):.17g}"


def noise_diagnostics(G: GammaMultiplier) -> NoiseDiagnostics:
    model = G.model
    times = G.paths.times
    exact = np.empty(times.size)
    for m in range(times.size):
        lo, hi = G.exponent_range(m)
        exact[m] = math.exp(2 * hi - lo)
    analytic = eta_analytic(model, G.paths.values, times)
    return NoiseDiagnostics(
        times=times,
        eta_exact=exact,
        eta_analytic=analytic,
        alpha=model.alpha,
        gamma_const=gamma_constant(model),
        beta=G.paths.values,
    )


def gamma_constant(model: NoiseModel) -> float:
    """3 max_i (|h_i|_1 + |lambda_i|)."""
    if model.N == 0:
        return 0.0
    return float(3 * np.max(model.l1 + np.abs(np.array(model.lambdas))))


def tail_probability_bound(r: float, model: NoiseModel) -> float:
    """Upper bound 2N r^{-N alpha / gamma^2} on P(sup_t eta(t) > r), alpha = min_i alpha_i."""
    if not r > 1:
        raise ValueError(f"tail bound needs r > 1, got {r}")
    if model.N == 0:
        raise ValueError("tail bound needs at least one noise channel")
    alpha = float(np.min(model.alpha))
    g = gamma_constant(model)
    N = model.N
    return 2 * N * r ** (-N * alpha / g**2)


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    n: int


def hitting_law_mc(
    nu: float,
    r: float,
    T_max: float,
    n_paths: int,
    seed: int,
    dt: float = 1e-3,
    chunk: int = 2048,
) -> MCEstimate:
    """Monte-Carlo estimate of P[sup_{t <= T_max} exp(beta(t) - nu t) >= r].

    Paths are monitored at multiples of ``dt`` only, which biases the
    estimate downward by O(sqrt(dt)).  A path is retired once it hits, or
    once it sits so far below the barrier that a later crossing has
    probability below 1e-15 (the running drift is -nu).
    """
    if not r > 1:
        raise ValueError(f"r must exceed 1, got {r}")
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    if n_paths < 1:
        raise ValueError("need at least one path")
    barrier = math.log(r)
    give_up = barrier + 15 * math.log(10) / (2 * nu)
    n_steps = int(math.ceil(T_max / dt))
    block = 256
    hits = 0
    for start in range(0, n_paths, chunk):
        size = min(chunk, n_paths - start)
        rng = philox(path_seed(seed, start // chunk))
        x = np.zeros(size)
        alive = np.ones(size, dtype=bool)
        done = 0
        while done < n_steps and alive.any():
            steps = min(block, n_steps - done)
            idx = np.flatnonzero(alive)
            incr = rng.standard_normal((steps, size))[:, idx] * math.sqrt(dt) - nu * dt
            walk = x[idx] + np.cumsum(incr, axis=0)
            hit = (walk >= barrier).any(axis=0)
            hits += int(hit.sum())
            x[idx] = walk[-1]
            alive[idx[hit]] = False
            alive &= x > barrier - give_up
            done += steps
    p = hits / n_paths
    return MCEstimate(p, math.sqrt(max(p * (1 - p), 0.0) / n_paths), n_paths)


def hitting_law_exact(nu: float, r: float) -> float:
    """P[sup_{t >= 0} exp(beta(t) - nu t) >= r] = r^{-2 nu}."""
    return r ** (-2 * nu)
