"""A fully specified run: grid, noise, solver settings and the data-sizing rule."""

from __future__ import annotations

from dataclasses import dataclass

from .grid import GridSpec, SpectralVectorField
from .initial import initial_vorticity, norm32
from .noise import BrownianPaths, GammaMultiplier, NoiseDiagnostics, noise_diagnostics, path_seed, sample_paths
from .operators import NoiseModel
from .solver import SolutionRecord, SolverConfig, picard_solve, threshold


@dataclass(frozen=True)
class SizeRule:
    """|U0|_{3/2} either fixed or a multiple of the per-path threshold C*/eta_inf."""

    value: float
    relative: bool = False

    @classmethod
    def parse(cls, text: str) -> SizeRule:
        s = text.replace(" ", "")
        if s.startswith("threshold"):
            rest = s[len("threshold") :]
            if rest == "":
                return cls(1.0, True)
            if rest[0] not in "*":
                raise ValueError(f"cannot parse size rule {text!r}")
            return cls(float(rest[1:]), True)
        return cls(float(s))

    def __str__(self):
        return f"threshold*{self.value!r}" if self.relative else repr(self.value)


@dataclass(frozen=True)
class PreparedPath:
    index: int
    seed: int
    U0: SpectralVectorField
    gamma: GammaMultiplier
    diag: NoiseDiagnostics

    @property
    def u0_norm(self) -> float:
        return norm32(self.U0)


@dataclass(frozen=True, eq=False)
class Scenario:
    grid: GridSpec
    model: NoiseModel
    cfg: SolverConfig
    u0_preset: str
    size: SizeRule
    seed: int = 0
    band: float = 4.0
    eta_kind: str = "l2"

    def path_seed(self, index: int) -> int:
        return path_seed(self.seed, index)

    def paths(self, index: int = 0, times=None) -> BrownianPaths:
        times = self.cfg.times if times is None else times
        return sample_paths(self.path_seed(index), times, self.model.N)

    def unit_data(self) -> SpectralVectorField:
        return initial_vorticity(self.u0_preset, self.grid, seed=self.seed, band=self.band)

    def target_norm(self, diag: NoiseDiagnostics) -> float:
        if not self.size.relative:
            return self.size.value
        return self.size.value * threshold(diag, self.cfg, self.eta_kind)

    def prepare(self, index: int = 0, paths: BrownianPaths | None = None) -> PreparedPath:
        paths = self.paths(index) if paths is None else paths
        gamma = GammaMultiplier(self.model, paths)
        diag = noise_diagnostics(gamma)
        U0 = self.unit_data() * self.target_norm(diag)
        return PreparedPath(index, self.path_seed(index), U0, gamma, diag)

    def solve(self, index: int = 0, override: bool = False, cfg: SolverConfig | None = None) -> tuple[PreparedPath, SolutionRecord]:
        prep = self.prepare(index)
        rec = picard_solve(prep.U0, prep.gamma, cfg or self.cfg, prep.diag, override=override)
        return prep, rec


def unit_shapes(grid: GridSpec, seed: int = 0, band: float = 4.0) -> dict[str, SpectralVectorField]:
    """The data shapes swept by calibration (shear is skipped: M vanishes on it)."""
    return {
        "taylor_green": initial_vorticity("taylor_green", grid),
        "random": initial_vorticity("random", grid, seed=seed, band=band),
    }

