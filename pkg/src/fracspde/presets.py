"""Named initial data and drifts used by the CLI and the test-suite.

Preset strings follow ``name`` or ``name(arg, ...)``, e.g. ``ramp(2.0)``,
``bump(3.0, 0.5)``, ``linear(0.5, -0.2)``.
"""

from __future__ import annotations

import re

import numpy as np

from .grid import GridSpec
from .heat_kernel import InitialData
from .spde_solver import DriftSpec, zero_drift

_PRESET = re.compile(r"^\s*([A-Za-z_]+)\s*(?:\(([^)]*)\))?\s*$")


def parse_preset(text: str) -> tuple[str, list[float]]:
    m = _PRESET.match(text)
    if not m:
        raise ValueError(f"malformed preset {text!r}")
    name = m.group(1).lower()
    args = [float(a) for a in m.group(2).split(",")] if m.group(2) and m.group(2).strip() else []
    return name, args


def _expect(name, args, n):
    if len(args) != n:
        raise ValueError(f"preset {name} takes {n} argument(s), got {len(args)}")


def ramp(x0: float, grid: GridSpec, kappa: float = 1.0) -> InitialData:
    """Ramp saturating at height x0: x0 tanh(x / x0).

    Slope 1 near the boundary, bounded by x0, and u0' = sech^2(x/x0) is
    Lipschitz, hence kappa-Hoelder for every kappa <= 1.
    """
    if not x0 > 0:
        raise ValueError("ramp height must be positive")
    return InitialData.from_functions(
        lambda x: x0 * np.tanh(x / x0),
        lambda x: 1.0 / np.cosh(x / x0) ** 2,
        grid,
        kappa,
    )


def bump(center: float, width: float, grid: GridSpec, kappa: float = 1.0) -> InitialData:
    """Gaussian bump minus its mirror image, so that u0(0) = 0."""
    if not width > 0:
        raise ValueError("bump width must be positive")
    w2 = width * width

    def f(x):
        return np.exp(-((x - center) ** 2) / (2 * w2)) - np.exp(-((x + center) ** 2) / (2 * w2))

    def df(x):
        return -(x - center) / w2 * np.exp(-((x - center) ** 2) / (2 * w2)) + (x + center) / w2 * np.exp(
            -((x + center) ** 2) / (2 * w2)
        )

    return InitialData.from_functions(f, df, grid, kappa)


def initial_data(text: str, grid: GridSpec, kappa: float = 1.0) -> InitialData:
    name, args = parse_preset(text)
    if name == "zero":
        _expect(name, args, 0)
        return InitialData(np.zeros(grid.n_x + 1), np.zeros(grid.n_x + 1), kappa)
    if name == "ramp":
        _expect(name, args, 1)
        return ramp(args[0], grid, kappa)
    if name in ("bump", "smoothbump"):
        _expect(name, args, 2)
        return bump(args[0], args[1], grid, kappa)
    raise ValueError(f"unknown u0 preset {name!r}")


def drift(text: str) -> DriftSpec:
    name, args = parse_preset(text)
    if name == "zero":
        _expect(name, args, 0)
        return zero_drift()
    if name == "constant":
        _expect(name, args, 1)
        c = args[0]
        # any positive constant bounds a constant map
        return DriftSpec(lambda u, v: np.full(np.shape(u), c), 1.0, text.strip())
    if name == "linear":
        _expect(name, args, 2)
        a, b = args
        return DriftSpec(lambda u, v: a * u + b * v, max(abs(a), abs(b)) or 1.0, text.strip())
    if name == "sine":
        _expect(name, args, 1)
        k = args[0]
        return DriftSpec(lambda u, v: np.sin(k * u) + np.sin(k * v), abs(k) or 1.0, text.strip())
    raise ValueError(f"unknown drift preset {name!r}")
