"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment.  Unknown keys, repeated
keys and unparsable values are errors that name the key and the line.
Presets are written in the same syntax and applied before the file's own
keys, so any preset value can be overridden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .grid import GridSpec, PhysicalVectorField
from .initial import PRESETS as U0_PRESETS
from .operators import KernelSpec, NoiseModel
from .scenario import Scenario, SizeRule
from .solver import SolverConfig


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None, source: str = "<config>"):
        where = source + (f":{line}" if line is not None else "")
        what = f" key {key!r}:" if key else ""
        super().__init__(f"{where}:{what} {message}")
        self.key = key
        self.line = line


# ----------------------------------------------------------------------------
# value parsers


def _float(s: str) -> float:
    return float(s)


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() == "auto" else float(s)


def _int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(f"expected an integer, got {s}")
    return int(v)


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true/false, got {s}")


def _floats(s: str) -> tuple[float, ...]:
    s = s.strip()
    if s in ("", "none"):
        return ()
    return tuple(float(x) for x in s.split(","))


def _kernels(s: str) -> tuple[KernelSpec, ...]:
    s = s.strip()
    if s in ("", "none"):
        return ()
    return tuple(KernelSpec.parse(x) for x in s.split(";"))


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s

    return parse


@dataclass(frozen=True)
class TestFunction:
    """cos or sin of (2 pi / L) k.xi placed in one vector component (1-based)."""

    kind: str
    k: tuple[int, int, int]
    component: int

    @classmethod
    def parse(cls, text: str) -> TestFunction:
        parts = text.strip().split(":")
        if len(parts) != 5 or parts[0] not in ("cos", "sin"):
            raise ValueError(f"test function must look like cos:k1:k2:k3:component, got {text!r}")
        k = tuple(int(x) for x in parts[1:4])
        comp = int(parts[4])
        if comp not in (1, 2, 3):
            raise ValueError(f"component must be 1, 2 or 3 in {text!r}")
        return cls(parts[0], k, comp)

    def __str__(self):
        return f"{self.kind}:{self.k[0]}:{self.k[1]}:{self.k[2]}:{self.component}"

    def sample(self, grid: GridSpec) -> PhysicalVectorField:
        X, Y, Z = grid.coordinates()
        phase = 2 * np.pi / grid.L * (self.k[0] * X + self.k[1] * Y + self.k[2] * Z)
        data = np.zeros((3,) + grid.physical_shape)
        data[self.component - 1] = np.cos(phase) if self.kind == "cos" else np.sin(phase)
        return PhysicalVectorField(grid, data)


def _pairings(s: str) -> tuple[TestFunction, ...]:
    s = s.strip()
    if s in ("", "none"):
        return ()
    return tuple(TestFunction.parse(x) for x in s.split(","))


def _snapshots(s: str) -> tuple[float, ...] | str:
    s = s.strip()
    if s in ("none", "final", "all"):
        return s
    return _floats(s)


def _size(s: str) -> SizeRule:
    return SizeRule.parse(s)


def _fmt_value(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        sep = ";" if v and isinstance(v[0], KernelSpec) else ","
        return sep.join(_fmt_value(x) if not isinstance(x, (KernelSpec, TestFunction)) else str(x) for x in v) or "none"
    return str(v)


# key -> (attribute, parser)
KEYS: dict[str, tuple[str, Callable]] = {
    "preset": ("preset", _choice("linear_check", "kato_small", "hitting_law", "dirac_limit")),
    "seed": ("seed", _int),
    "p": ("p", _float),
    "T": ("T", _float),
    "grid.n": ("grid_n", _int),
    "grid.L": ("grid_L", _float),
    "grid.M": ("grid_M", _int),
    "grid.gamma": ("grid_gamma", _float),
    "noise.N": ("noise_N", _int),
    "noise.kernel": ("noise_kernel", _kernels),
    "noise.lambda": ("noise_lambda", _floats),
    "u0.preset": ("u0_preset", _choice(*U0_PRESETS)),
    "u0.norm32": ("u0_norm32", _size),
    "u0.band": ("u0_band", _float),
    "picard.tol": ("picard_tol", _float),
    "picard.max_iter": ("picard_max_iter", _int),
    "constants.C1": ("C1", _opt_float),
    "constants.C2": ("C2", _opt_float),
    "constants.Cstar": ("Cstar", _opt_float),
    "model.nonlinear": ("nonlinear", _bool),
    "output.snapshots": ("snapshots", _snapshots),
    "output.pairings": ("pairings", _pairings),
    "mc.kind": ("mc_kind", _choice("scenario", "eta", "hitting")),
    "mc.paths": ("mc_paths", _int),
    "mc.r": ("mc_r", _floats),
    "hitting.nu": ("hitting_nu", _float),
    "hitting.r": ("hitting_r", _float),
    "hitting.T_max": ("hitting_T_max", _float),
    "hitting.dt": ("hitting_dt", _float),
    "calibrate.paths": ("calibrate_paths", _int),
    "calibrate.sizes": ("calibrate_sizes", _floats),
    "verify.paths": ("verify_paths", _int),
}

# constants fitted by `randvort calibrate --preset kato_small` (4 paths, sizes 0.25..2)
FROZEN_C1 = 0.37108406411337869
FROZEN_C2 = 0.00063572694763898115

_COMMON = f"""
p = 1.8
noise.N = 1
noise.kernel = gaussian{{eps=0.5, mass=1.0}}
noise.lambda = 7.0
constants.C1 = {FROZEN_C1!r}
constants.C2 = {FROZEN_C2!r}
"""

PRESETS: dict[str, str] = {
    "linear_check": _COMMON
    + """
T = 1.0
grid.n = 16
grid.M = 32
u0.preset = taylor_green
u0.norm32 = threshold*0.5
model.nonlinear = false
""",
    "kato_small": _COMMON
    + """
T = 1.0
grid.n = 32
grid.M = 64
grid.gamma = 2.0
u0.preset = taylor_green
u0.norm32 = threshold*0.5
picard.tol = 1e-8
picard.max_iter = 12
""",
    "hitting_law": _COMMON
    + """
mc.kind = hitting
mc.paths = 10000
hitting.nu = 1.0
hitting.r = 2.0
hitting.T_max = 50.0
hitting.dt = 0.001
""",
    "dirac_limit": """
p = 1.8
T = 1.0
grid.n = 32
grid.M = 64
noise.N = 1
noise.kernel = mollified_dirac{eps=0.3}
noise.lambda = 7.0
u0.preset = taylor_green
u0.norm32 = threshold*0.5
"""
    + f"constants.C1 = {FROZEN_C1!r}\nconstants.C2 = {FROZEN_C2!r}\n",
}


@dataclass(frozen=True)
class RunConfig:
    preset: str | None = None
    seed: int = 0
    p: float = 1.8
    T: float = 1.0
    grid_n: int = 32
    grid_L: float = 2 * math.pi
    grid_M: int = 64
    grid_gamma: float = 2.0
    noise_N: int = 1
    noise_kernel: tuple[KernelSpec, ...] = (KernelSpec("gaussian", 0.5, 1.0),)
    noise_lambda: tuple[float, ...] = (7.0,)
    u0_preset: str = "taylor_green"
    u0_norm32: SizeRule = SizeRule(0.5, True)
    u0_band: float = 4.0
    picard_tol: float = 1e-8
    picard_max_iter: int = 12
    C1: float | None = FROZEN_C1
    C2: float | None = FROZEN_C2
    Cstar: float | None = None
    nonlinear: bool = True
    snapshots: tuple[float, ...] | str = "final"
    pairings: tuple[TestFunction, ...] = field(
        default_factory=lambda: tuple(TestFunction.parse(x) for x in ("cos:1:-1:1:3", "cos:1:1:1:3", "sin:1:0:0:2"))
    )
    mc_kind: str = "scenario"
    mc_paths: int = 100
    mc_r: tuple[float, ...] = (2.0, 4.0, 8.0)
    hitting_nu: float = 1.0
    hitting_r: float = 2.0
    hitting_T_max: float = 50.0
    hitting_dt: float = 1e-3
    calibrate_paths: int = 4
    calibrate_sizes: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0)
    verify_paths: int = 10

    # -- derived objects -------------------------------------------------

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.grid_n, self.grid_L)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            p=self.p, T=self.T, M=self.grid_M, grading=self.grid_gamma, tol=self.picard_tol,
            max_iter=self.picard_max_iter, C1=self.C1, C2=self.C2, Cstar=self.Cstar, nonlinear=self.nonlinear,
        )

    def noise_model(self, grid: GridSpec | None = None) -> NoiseModel:
        return NoiseModel(grid or self.grid, self.noise_kernel, self.noise_lambda)

    def scenario(self) -> Scenario:
        grid = self.grid
        return Scenario(grid, self.noise_model(grid), self.solver_config(), self.u0_preset, self.u0_norm32,
                        seed=self.seed, band=self.u0_band)

    def validate(self) -> None:
        """Cross-key checks; raises ConfigError."""
        if self.noise_N != len(self.noise_kernel) or self.noise_N != len(self.noise_lambda):
            raise ConfigError(
                f"noise.N = {self.noise_N} but {len(self.noise_kernel)} kernels and {len(self.noise_lambda)} lambdas given",
                "noise.N",
            )
        try:
            cfg = self.solver_config()
            self.grid
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        # derived exponents against their defining relations
        checks = [
            (1 / cfg.q, 2 / cfg.p - 1 / 3),
            (cfg.r1, 3 * cfg.p / (3 - cfg.p)),
            (cfg.qprime, 3 * cfg.p / (4 * cfg.p - 6)),
            (cfg.q, 3 * cfg.r1 / (cfg.r1 + 6)),
        ]
        for a, b in checks:
            if abs(a - b) > 1e-12 * max(1.0, abs(b)):
                raise ConfigError(f"derived exponents inconsistent ({a} vs {b})", "p")
        if self.u0_norm32.relative and cfg.cstar is None:
            raise ConfigError("u0.norm32 relative to the threshold needs constants.C1/C2 or constants.Cstar",
                              "u0.norm32")

    # -- echo ------------------------------------------------------------

    def dump(self) -> str:
        """Effective configuration; loading it back reproduces this object."""
        lines = ["# effective configuration"]
        for key, (attr, _) in KEYS.items():
            v = getattr(self, attr)
            if key == "preset":
                if v is not None:
                    lines.append(f"# expanded from preset {v}")
                continue
            lines.append(f"{key} = {_fmt_value(v)}")
        cfg = self.solver_config()
        lines.append(f"# derived: q = {cfg.q!r}, r1 = {cfg.r1!r}, qprime = {cfg.qprime!r}")
        if cfg.cstar is not None:
            lines.append(f"# derived: Cstar = {cfg.cstar!r}")
        return "\n".join(lines) + "\n"


def _parse_lines(text: str, source: str) -> list[tuple[int, str, str]]:
    out = []
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", None, lineno, source)
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError("unknown key", key, lineno, source)
        if key in seen:
            raise ConfigError(f"repeated (first set on line {seen[key]})", key, lineno, source)
        seen[key] = lineno
        out.append((lineno, key, value))
    return out


def _apply(values: dict, entries, source: str) -> None:
    for lineno, key, value in entries:
        attr, parse = KEYS[key]
        try:
            values[attr] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"bad value {value!r}: {exc}", key, lineno, source) from exc


def load_config(
    text: str = "",
    source: str = "<config>",
    preset: str | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Defaults, then the preset, then the text's keys, then explicit overrides."""
    entries = _parse_lines(text, source)
    file_preset = [(ln, v) for ln, k, v in entries if k == "preset"]
    name = preset
    if name is None and file_preset:
        ln, v = file_preset[0]
        name = v
        try:
            KEYS["preset"][1](v)
        except ValueError as exc:
            raise ConfigError(str(exc), "preset", ln, source) from exc
    values: dict = {}
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}", "preset")
        _apply(values, _parse_lines(PRESETS[name], f"<preset {name}>"), f"<preset {name}>")
    _apply(values, [e for e in entries if e[1] != "preset"], source)
    values["preset"] = name
    if seed is not None:
        values["seed"] = int(seed)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def load_config_file(path: str | Path | None, preset: str | None = None, seed: int | None = None) -> RunConfig:
    if path is None:
        return load_config("", preset=preset, seed=seed)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", source=str(path)) from exc
    return load_config(text, str(path), preset=preset, seed=seed)

