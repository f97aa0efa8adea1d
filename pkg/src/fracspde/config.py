"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored; unknown keys are rejected. The
resolved configuration, including the calibrated c_H, is written back next
to every run's outputs and can be fed to the CLI again unchanged.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .fractional_noise import HurstPair
from .grid import GridSpec
from .spde_solver import SolverConfig, SolverMode


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


@dataclass
class RunConfig:
    h1: float = 0.8
    h2: float = 0.7
    relaxed: bool = False
    T: float = 1.0
    L: float = 8.0
    n_t: int = 32
    n_x: int = 32
    theta: float = 0.25
    thetas: tuple[float, ...] = ()
    picard_tol: float = 1e-6
    picard_max_iters: int = 200
    mode: str = "time_stepping"
    seed: int = 0
    ensemble_size: int = 1
    output_dir: str = "fracspde-out"
    u0_preset: str = "zero"
    g_preset: str = "zero"
    kappa: float = 1.0
    subset: int = 6
    x_index: int = -1
    kernel_samples: int = 100_000
    c_H: float | None = None
    _extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ConfigError("ensemble_size must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.mode not in {m.value for m in SolverMode}:
            raise ConfigError(f"mode must be one of {[m.value for m in SolverMode]}")
        try:
            self.hurst
            self.grid
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def hurst(self) -> HurstPair:
        return HurstPair.relaxed(self.h1, self.h2) if self.relaxed else HurstPair(self.h1, self.h2)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.T, self.L, self.n_t, self.n_x)

    def solver_config(self) -> SolverConfig:
        try:
            return SolverConfig(self.grid, self.theta, self.picard_tol, self.picard_max_iters, SolverMode(self.mode))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def resolved_x_index(self) -> int:
        return self.n_x // 2 if self.x_index < 0 else self.x_index

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            if f.name.startswith("_"):
                continue
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig) if not f.name.startswith("_")}
_PARSERS = {
    "h1": float,
    "h2": float,
    "relaxed": _bool,
    "T": float,
    "L": float,
    "n_t": int,
    "n_x": int,
    "theta": float,
    "thetas": _floats,
    "picard_tol": float,
    "picard_max_iters": int,
    "mode": lambda s: s.strip().lower(),
    "seed": int,
    "ensemble_size": int,
    "output_dir": str,
    "u0_preset": str,
    "g_preset": str,
    "kappa": float,
    "subset": int,
    "x_index": int,
    "kernel_samples": int,
    "c_H": float,
}


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    values.update(overrides or {})
    return RunConfig(**values)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)
