"""Exact fractional-noise sampling and mild-form solvers for heat-type SPDEs on the half-line."""

from .fractional_noise import CellIncrements, FieldSample, HurstPair, sample_field, sample_fields
from .grid import GridSpec
from .heat_kernel import InitialData, KernelKind
from .spde_solver import (
    DriftSpec,
    SolutionField,
    SolverConfig,
    SolverMode,
    picard_solve,
    solve_coupled,
    solve_nonlocal,
    theta_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "CellIncrements",
    "DriftSpec",
    "FieldSample",
    "GridSpec",
    "HurstPair",
    "InitialData",
    "KernelKind",
    "SolutionField",
    "SolverConfig",
    "SolverMode",
    "picard_solve",
    "sample_field",
    "sample_fields",
    "solve_coupled",
    "solve_nonlocal",
    "theta_sweep",
]
