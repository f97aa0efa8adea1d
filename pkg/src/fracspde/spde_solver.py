"""Mild-form solvers for the nonlocal and the coupled SPDE.

All solvers discretise the Duhamel formulation

    u(t) = P_t u0 + int_0^t P_{t-s} g(u, u^theta)(s) ds + int_0^t P_{t-s} B^H(ds, dy)

with the exact Dirichlet heat kernel as propagator (trapezoid rule in
space), so there is no CFL restriction. Time integrals over one step use
the kernel at the midpoint lag dt/2, which keeps the t^-rho singularities
of p and d_x p integrable.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fractional_noise import CellIncrements
from .grid import GridSpec
from .heat_kernel import InitialData, KernelKind, kernel_matrix, midpoint_kernel_matrix


class NumericalError(RuntimeError):
    pass


class BlowUpError(NumericalError):
    def __init__(self, time_index: int, space_index: int, value: float):
        self.time_index = time_index
        self.space_index = space_index
        self.value = value
        super().__init__(f"non-finite value {value} at node (t_{time_index}, x_{space_index})")


class PicardConvergenceError(NumericalError):
    def __init__(self, trace: list[float], tol: float):
        self.trace = list(trace)
        super().__init__(
            f"Picard iteration did not reach tol={tol:g} in {len(trace)} iterations "
            f"(last distance {trace[-1]:.3e})"
        )


class SolverMode(enum.Enum):
    TIME_STEPPING = "time_stepping"
    PICARD = "picard"


class CompanionKind(enum.Enum):
    THETA_DIFFERENCE = "theta_difference"
    GRADIENT = "gradient"


@dataclass(frozen=True)
class DriftSpec:
    """Drift g(u, v) with Lipschitz constant L in |g(a,b) - g(c,d)| <= L (|a-c| + |b-d|)."""

    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz_L: float
    name: str = "custom"

    def __post_init__(self):
        if not self.lipschitz_L > 0:
            raise ValueError("lipschitz_L must be positive")

    def __call__(self, u, v):
        return np.broadcast_to(np.asarray(self.g(u, v), dtype=float), np.shape(u))

    def check_lipschitz(self, n: int = 2000, scale: float = 10.0, seed: int = 0) -> float:
        """Largest observed Lipschitz ratio on random pairs; raises if it exceeds L."""
        gen = np.random.default_rng(seed)
        a, b, c, d = (scale * gen.standard_normal(n) for _ in range(4))
        num = np.abs(self(a, b) - self(c, d))
        den = np.abs(a - c) + np.abs(b - d)
        ratio = float(np.max(num / den))
        if ratio > self.lipschitz_L * (1 + 1e-9):
            raise ValueError(f"drift violates its Lipschitz bound: ratio {ratio:g} > {self.lipschitz_L:g}")
        return ratio


def zero_drift() -> DriftSpec:
    return DriftSpec(lambda u, v: np.zeros_like(u), 1.0, "zero")


@dataclass(frozen=True)
class SolverConfig:
    grid: GridSpec
    theta: float
    picard_tol: float = 1e-6
    picard_max_iters: int = 200
    mode: SolverMode = SolverMode.TIME_STEPPING

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be a positive shift, got {self.theta}")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.picard_max_iters < 1:
            raise ValueError("picard_max_iters must be >= 1")
        if self.shift_cells > self.grid.n_x - 1:
            raise ValueError(f"theta={self.theta} spans the whole grid")

    @property
    def shift_cells(self) -> int:
        """theta rounded to the nearest positive number of cells."""
        return max(1, int(round(self.theta / self.grid.dx)))

    @property
    def theta_snapped(self) -> float:
        return self.shift_cells * self.grid.dx

    def as_dict(self) -> dict:
        return {
            **self.grid.as_dict(),
            "theta": self.theta_snapped,
            "picard_tol": self.picard_tol,
            "picard_max_iters": self.picard_max_iters,
            "mode": self.mode.value,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SolutionField:
    """Solution u on the grid with its companion (u^theta or v = d_x u)."""

    u: np.ndarray
    companion: np.ndarray
    companion_kind: CompanionKind
    grid: GridSpec
    metadata: dict = field(default_factory=dict)
    norm_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.u.shape != self.grid.shape or self.companion.shape != self.grid.shape:
            raise ValueError("solution arrays do not match the grid")
        if np.any(self.u[:, 0] != 0.0):
            raise ValueError("boundary condition u(t, 0) = 0 violated")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.companion))):
            raise ValueError("solution contains non-finite values")
        if self.norm_mask is None:
            self.norm_mask = np.ones(self.grid.n_x + 1, dtype=bool)


def shifted_difference(u: np.ndarray, m: int, theta: float) -> np.ndarray:
    """(u(x + theta) - u(x)) / theta along the last axis, theta = m cells.

    The last m nodes have no partner inside the grid; they repeat the last
    valid value and are excluded from norms (see ``valid_shift_mask``).
    """
    out = np.empty_like(u)
    out[..., :-m] = (u[..., m:] - u[..., :-m]) / theta
    out[..., -m:] = out[..., -m - 1 : -m]
    return out


def valid_shift_mask(n_x: int, m: int) -> np.ndarray:
    mask = np.ones(n_x + 1, dtype=bool)
    mask[n_x + 1 - m :] = False
    return mask


@dataclass(frozen=True)
class _Operators:
    prop: np.ndarray  # P_dt with trapezoid weights
    drift: np.ndarray  # P_{dt/2} with trapezoid weights
    noise: np.ndarray  # p(dt/2, x_j, y_mid_k)
    dprop: np.ndarray
    ddrift: np.ndarray
    dnoise: np.ndarray


@functools.lru_cache(maxsize=16)
def _operators(grid: GridSpec) -> _Operators:
    dt = grid.dt
    return _Operators(
        prop=kernel_matrix(KernelKind.P, dt, grid),
        drift=kernel_matrix(KernelKind.P, 0.5 * dt, grid),
        noise=midpoint_kernel_matrix(KernelKind.P, 0.5 * dt, grid),
        dprop=kernel_matrix(KernelKind.DX, dt, grid),
        ddrift=kernel_matrix(KernelKind.DX, 0.5 * dt, grid),
        dnoise=midpoint_kernel_matrix(KernelKind.DX, 0.5 * dt, grid),
    )


@functools.lru_cache(maxsize=4)
def _lagged_kernels(grid: GridSpec, midpoint: bool) -> np.ndarray:
    """Stack over m = 0..n_t-1 of kernels at lag (m + 1/2) dt."""
    build = midpoint_kernel_matrix if midpoint else kernel_matrix
    out = np.stack([build(KernelKind.P, (m + 0.5) * grid.dt, grid) for m in range(grid.n_t)])
    out.setflags(write=False)
    return out


def _history_convolution(sources: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """out[..., n, :] = sum_{i<n} kernels[n-1-i] @ sources[..., i, :]; row 0 is zero."""
    n_t = kernels.shape[0]
    out = np.zeros(sources.shape[:-2] + (n_t + 1, kernels.shape[1]))
    for m in range(n_t):
        out[..., m + 1 :, :] += sources[..., : n_t - m, :] @ kernels[m].T
    return out


def stochastic_convolution(inc, grid: GridSpec | None = None) -> np.ndarray:
    """int_0^t int_D p(t-s, x, y) B^H(ds, dy) at every node.

    ``inc`` is a CellIncrements or an array of increments with optional
    leading ensemble axes. Cell (i, k) enters at lag t_n - s_mid_i and
    position y_mid_k, so the newest layer sits at lag dt/2.
    """
    if isinstance(inc, CellIncrements):
        grid = inc.grid
        d2 = inc.d2
    else:
        if grid is None:
            raise ValueError("grid required for raw increment arrays")
        d2 = np.asarray(inc, dtype=float)
    if d2.shape[-2:] != (grid.n_t, grid.n_x):
        raise ValueError("increments do not match the grid")
    return _history_convolution(d2, _lagged_kernels(grid, True))


def _check_inputs(cfg: SolverConfig, noise, u0: InitialData):
    grid = cfg.grid
    if len(u0.samples) != grid.n_x + 1:
        raise ValueError("initial data not sampled on the solver grid")
    if u0.samples[0] != 0.0:
        raise ValueError("u0(0) must vanish to match the Dirichlet boundary")
    if noise is None:
        return np.zeros((grid.n_t, grid.n_x))
    if noise.grid != grid:
        raise ValueError("noise and solver grids differ")
    return noise.d2


def _check_finite(layer: np.ndarray, n: int):
    if not np.all(np.isfinite(layer)):
        j = int(np.flatnonzero(~np.isfinite(layer))[0])
        raise BlowUpError(n, j, float(layer[j]))


def _metadata(cfg: SolverConfig, noise, extra: dict | None) -> dict:
    meta = {"config_hash": cfg.config_hash(), "theta": cfg.theta_snapped, "grid": cfg.grid.as_dict()}
    if extra:
        meta.update(extra)
    return meta


def solve_nonlocal(
    cfg: SolverConfig,
    noise: CellIncrements | None,
    u0: InitialData,
    g: DriftSpec,
    metadata: dict | None = None,
) -> SolutionField:
    """Explicit mild time stepping for the theta-nonlocal equation.

    u_{n+1} = P_dt u_n + dt P_{dt/2} g(u_n, u_n^theta) + p(dt/2) * d2_n
    """
    if cfg.mode is not SolverMode.TIME_STEPPING:
        raise ValueError("solve_nonlocal requires mode=TIME_STEPPING")
    grid = cfg.grid
    d2 = _check_inputs(cfg, noise, u0)
    ops = _operators(grid)
    m, theta, dt = cfg.shift_cells, cfg.theta_snapped, grid.dt

    u = np.empty(grid.shape)
    u[0] = u0.samples
    for n in range(grid.n_t):
        drift = g(u[n], shifted_difference(u[n], m, theta))
        nxt = ops.prop @ u[n] + dt * (ops.drift @ drift) + ops.noise @ d2[n]
        nxt[0] = 0.0
        _check_finite(nxt, n + 1)
        u[n + 1] = nxt
    return SolutionField(
        u,
        shifted_difference(u, m, theta),
        CompanionKind.THETA_DIFFERENCE,
        grid,
        _metadata(cfg, noise, metadata),
        valid_shift_mask(grid.n_x, m),
    )


def solve_coupled(
    cfg: SolverConfig,
    noise: CellIncrements | None,
    u0: InitialData,
    g: DriftSpec,
    metadata: dict | None = None,
) -> SolutionField:
    """Time stepping for the pair (u, v = d_x u); v uses d_x p in every term.

    v_{n+1} = d_x P_dt u_n + dt d_x P_{dt/2} g(u_n, v_n) + d_x p(dt/2) * d2_n
    """
    grid = cfg.grid
    d2 = _check_inputs(cfg, noise, u0)
    ops = _operators(grid)
    dt = grid.dt

    u = np.empty(grid.shape)
    v = np.empty(grid.shape)
    u[0] = u0.samples
    v[0] = u0.derivative_samples
    for n in range(grid.n_t):
        drift = g(u[n], v[n])
        nu = ops.prop @ u[n] + dt * (ops.drift @ drift) + ops.noise @ d2[n]
        nv = ops.dprop @ u[n] + dt * (ops.ddrift @ drift) + ops.dnoise @ d2[n]
        nu[0] = 0.0
        _check_finite(nu, n + 1)
        _check_finite(nv, n + 1)
        u[n + 1] = nu
        v[n + 1] = nv
    return SolutionField(u, v, CompanionKind.GRADIENT, grid, _metadata(cfg, noise, metadata))


def heat_part(u0: InitialData, grid: GridSpec) -> np.ndarray:
    """p * u0 at every grid time, the starting iterate of the Picard scheme."""
    out = np.empty(grid.shape)
    out[0] = u0.samples
    for n in range(1, grid.n_t + 1):
        out[n] = kernel_matrix(KernelKind.P, grid.t[n], grid) @ u0.samples
    out[:, 0] = 0.0
    return out


def picard_solve(
    cfg: SolverConfig,
    noise: CellIncrements | None,
    u0: InitialData,
    g: DriftSpec,
    start: str | np.ndarray = "heat",
    metadata: dict | None = None,
) -> tuple[SolutionField, list[float]]:
    """Fixed-point iteration of the full space-time mild map.

    u_{k+1} = p*u0 + p*g(u_k, u_k^theta) + p*B^H. ``start`` is ``"heat"``
    (p*u0), ``"zero"`` or an explicit array. The trace holds the sup-norm
    distance between consecutive iterates; iteration stops once it drops
    below ``cfg.picard_tol``.
    """
    if cfg.mode is not SolverMode.PICARD:
        raise ValueError("picard_solve requires mode=PICARD")
    grid = cfg.grid
    d2 = _check_inputs(cfg, noise, u0)
    m, theta, dt = cfg.shift_cells, cfg.theta_snapped, grid.dt
    kernels = _lagged_kernels(grid, False)

    base = heat_part(u0, grid)
    if noise is not None:
        base = base + stochastic_convolution(d2, grid)
    if isinstance(start, str):
        if start == "heat":
            current = heat_part(u0, grid)
        elif start == "zero":
            current = np.zeros(grid.shape)
        else:
            raise ValueError(f"unknown starting iterate {start!r}")
    else:
        current = np.array(start, dtype=float)
        if current.shape != grid.shape:
            raise ValueError("starting iterate does not match the grid")

    trace: list[float] = []
    for _ in range(cfg.picard_max_iters):
        drift = g(current, shifted_difference(current, m, theta))
        new = base + dt * _history_convolution(drift[:-1], kernels)
        new[0] = u0.samples
        new[:, 0] = 0.0
        if not np.all(np.isfinite(new)):
            n, j = np.argwhere(~np.isfinite(new))[0]
            raise BlowUpError(int(n), int(j), float(new[n, j]))
        trace.append(float(np.max(np.abs(new - current))))
        current = new
        if trace[-1] < cfg.picard_tol:
            break
    else:
        raise PicardConvergenceError(trace, cfg.picard_tol)

    sol = SolutionField(
        current,
        shifted_difference(current, m, theta),
        CompanionKind.THETA_DIFFERENCE,
        grid,
        _metadata(cfg, noise, metadata),
        valid_shift_mask(grid.n_x, m),
    )
    return sol, trace


def _stack(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    return arr[None] if arr.ndim == 2 else arr


def sup_mean_square_distance(a, b, t_index: int | None = None, mask: np.ndarray | None = None) -> float:
    """max over x of the ensemble mean of (a - b)^2.

    ``a`` and ``b`` are single fields (n_t+1, n_x+1) or ensembles with a
    leading sample axis. ``t_index=None`` takes the worst time layer.
    ``mask`` selects the space nodes that count.
    """
    a = _stack(a)
    b = _stack(b)
    if a.shape != b.shape:
        raise ValueError(f"ensemble shapes differ: {a.shape} vs {b.shape}")
    ms = np.mean((a - b) ** 2, axis=0)
    if mask is not None:
        ms = ms[..., np.asarray(mask, dtype=bool)]
    if t_index is not None:
        return float(np.max(ms[t_index]))
    return float(np.max(ms))


@dataclass
class ThetaSweepResult:
    """Companions of the nonlocal solution for several theta on common noise."""

    thetas: np.ndarray
    solutions: list[SolutionField]
    pairwise_d2: np.ndarray
    companions: np.ndarray  # (n_theta, n_samples, n_t+1, n_x+1)
    norm_mask: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.companions.shape[1]


def theta_sweep(
    base_cfg: SolverConfig,
    thetas: Sequence[float],
    noise: CellIncrements | Sequence[CellIncrements] | None,
    u0: InitialData,
    g: DriftSpec,
) -> ThetaSweepResult:
    """Solve once per theta with the same noise and u0; compare companions.

    ``noise`` may be a single realisation or an ensemble; with an ensemble
    the pairwise distances are sup-x mean squares over the members. Thetas
    are snapped to cell multiples and ordered from largest to smallest.
    ``solutions`` keeps the first member's solution for each theta.
    """
    if len(thetas) < 2:
        raise ValueError("theta sweep needs at least two values")
    cfgs = [
        SolverConfig(base_cfg.grid, th, base_cfg.picard_tol, base_cfg.picard_max_iters, SolverMode.TIME_STEPPING)
        for th in thetas
    ]
    shifts = [c.shift_cells for c in cfgs]
    if len(set(shifts)) != len(shifts):
        raise ValueError(f"thetas {list(thetas)} do not snap to distinct cell multiples {shifts}")
    order = np.argsort(shifts)[::-1]
    cfgs = [cfgs[i] for i in order]

    members = [noise] if noise is None or isinstance(noise, CellIncrements) else list(noise)
    grid = base_cfg.grid
    comps = np.empty((len(cfgs), len(members)) + grid.shape)
    firsts = []
    for a, cfg in enumerate(cfgs):
        for k, inc in enumerate(members):
            sol = solve_nonlocal(cfg, inc, u0, g)
            comps[a, k] = sol.companion
            if k == 0:
                firsts.append(sol)

    mask = valid_shift_mask(grid.n_x, max(shifts))
    interior = mask & grid.interior_x()
    if interior.any():
        mask = interior
    n = len(cfgs)
    pairwise = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            pairwise[a, b] = pairwise[b, a] = sup_mean_square_distance(comps[a], comps[b], mask=mask)
    thetas_out = np.array([c.theta_snapped for c in cfgs])
    return ThetaSweepResult(thetas_out, firsts, pairwise, comps, mask)


def snap_theta(theta: float, grid: GridSpec) -> float:
    return max(1, int(round(theta / grid.dx))) * grid.dx
