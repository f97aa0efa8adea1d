"""Dirichlet heat kernel on the half-line and its derivatives.

The Green function of d/dt - (1/2) d^2/dx^2 on [0, inf) with an absorbing
boundary at 0 is obtained by the image method,

    p(t, x, y) = phi(t, x - y) - phi(t, x + y),
    phi(t, z)  = exp(-z^2 / 2t) / sqrt(2 pi t).

Every derivative is phi times a polynomial in z/t, so each kernel kind is
stored as that polynomial and evaluated on both the direct and the image
term. All functions broadcast over array arguments.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .grid import GridSpec


class AccuracyWarning(UserWarning):
    """Quadrature on the grid is too coarse for the requested kernel width."""


class KernelKind(enum.Enum):
    P = "p"
    DX = "dx"
    DT = "dt"
    DXX = "dxx"
    DXT = "dxt"


# t-exponent rho in |kernel| <= C t^{-rho} exp(-(x-y)^2 / 4t)
BOUND_EXPONENT = {
    KernelKind.P: 0.5,
    KernelKind.DX: 1.0,
    KernelKind.DT: 1.5,
    KernelKind.DXX: 1.5,
    KernelKind.DXT: 2.0,
}


def _poly(kind: KernelKind, z, t):
    """Factor multiplying phi(t, z) for the z-derivative structure of ``kind``."""
    if kind is KernelKind.P:
        return np.ones_like(z)
    if kind is KernelKind.DX:
        return -z / t
    if kind is KernelKind.DXX:
        return z * z / (t * t) - 1.0 / t
    if kind is KernelKind.DT:
        return 0.5 * (z * z / (t * t) - 1.0 / t)
    if kind is KernelKind.DXT:
        return 0.5 * (3.0 * z / (t * t) - z**3 / t**3)
    raise ValueError(f"unknown kernel kind {kind!r}")


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("heat kernel requires t > 0")
    return t


def _broadcast(t, x, y):
    t = _check_time(t)
    return np.broadcast_arrays(t, np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def _scalar_or_array(a):
    return a.item() if a.ndim == 0 else a


def kernel(kind: KernelKind, t, x, y):
    """Closed-form value of p or one of its derivatives."""
    t, x, y = _broadcast(t, x, y)
    direct = x - y
    image = x + y
    norm = 1.0 / np.sqrt(2.0 * np.pi * t)
    val = norm * (
        _poly(kind, direct, t) * np.exp(-direct * direct / (2.0 * t))
        - _poly(kind, image, t) * np.exp(-image * image / (2.0 * t))
    )
    return _scalar_or_array(val)


def p_eval(t, x, y):
    """Dirichlet heat kernel p(t, x, y); zero whenever x = 0 or y = 0."""
    return kernel(KernelKind.P, t, x, y)


def p_derivative(kind: KernelKind, t, x, y):
    """Analytic derivative of p; ``kind`` must not be ``KernelKind.P``."""
    if kind is KernelKind.P:
        raise ValueError("p_derivative needs a derivative kind; use p_eval for P")
    return kernel(kind, t, x, y)


def bound_ratio(kind: KernelKind, t, x, y):
    """|kernel| / (t^-rho exp(-(x-y)^2 / 4t)).

    The Gaussian envelope is divided out inside the exponent so the ratio
    stays finite where both numerator and envelope underflow.
    """
    t, x, y = _broadcast(t, x, y)
    d2 = (x - y) ** 2 / (4.0 * t)
    direct = x - y
    image = x + y
    norm = 1.0 / np.sqrt(2.0 * np.pi * t)
    val = norm * (
        _poly(kind, direct, t) * np.exp(-direct * direct / (2.0 * t) + d2)
        - _poly(kind, image, t) * np.exp(-image * image / (2.0 * t) + d2)
    )
    return _scalar_or_array(np.abs(val) * t ** BOUND_EXPONENT[kind])


def sup_bound_ratio(kind: KernelKind, n: int = 100_000, seed: int = 0, t_max=1.0, x_max=10.0):
    """Largest bound_ratio over ``n`` uniform draws in (0, t_max] x [0, x_max]^2."""
    from .rng import stream

    gen = stream(seed, 0)
    t = t_max * (1.0 - gen.random(n))  # (0, t_max]
    x = x_max * gen.random(n)
    y = x_max * gen.random(n)
    return float(np.max(bound_ratio(kind, t, x, y)))


def exact_mass(t, x):
    """int_0^inf p(t, x, y) dy = erf(x / sqrt(2t))."""
    t = _check_time(t)
    return erf(np.asarray(x, dtype=float) / np.sqrt(2.0 * t))


def kernel_matrix(kind: KernelKind, t: float, grid: GridSpec) -> np.ndarray:
    """Trapezoid quadrature matrix M with (M f)_j ~ int_0^L K(t, x_j, y) f(y) dy."""
    x = grid.x
    return kernel(kind, t, x[:, None], x[None, :]) * grid.trapezoid_weights()[None, :]


def midpoint_kernel_matrix(kind: KernelKind, t: float, grid: GridSpec) -> np.ndarray:
    """K(t, x_j, y_mid_k), shape (n_x + 1, n_x); pairs with cell-integrated measures."""
    return kernel(kind, t, grid.x[:, None], grid.x_mid[None, :])


def quadrature_error(t: float, grid: GridSpec) -> float:
    """Worst error of the trapezoid mass against erf, away from the truncation edge."""
    x = grid.x
    interior = x <= grid.L - 6.0 * math.sqrt(t)
    if not np.any(interior):
        interior = np.zeros_like(x, dtype=bool)
        interior[: max(2, len(x) // 2)] = True
    mass = kernel_matrix(KernelKind.P, t, grid).sum(axis=1)
    return float(np.max(np.abs(mass - exact_mass(t, x))[interior]))


@dataclass
class InitialData:
    """Samples of u0 and u0' on the space grid, with the declared Hoelder exponent of u0'."""

    samples: np.ndarray
    derivative_samples: np.ndarray
    holder_kappa: float = 1.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.derivative_samples = np.asarray(self.derivative_samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.shape != self.derivative_samples.shape:
            raise ValueError("samples and derivative_samples must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(self.samples)) and np.all(np.isfinite(self.derivative_samples))):
            raise ValueError("initial data must be finite")
        if not 0.0 < self.holder_kappa <= 1.0:
            raise ValueError(f"holder_kappa must lie in (0, 1], got {self.holder_kappa}")

    @classmethod
    def from_functions(cls, f, df, grid: GridSpec, kappa: float = 1.0) -> "InitialData":
        x = grid.x
        return cls(np.asarray(f(x), dtype=float), np.asarray(df(x), dtype=float), kappa)

    @classmethod
    def zero(cls, grid: GridSpec) -> "InitialData":
        return cls(np.zeros(grid.n_x + 1), np.zeros(grid.n_x + 1), 1.0)

    def holder_quotients(self, dx: float, max_lag: int = 8) -> np.ndarray:
        """max_j |u0'(x_{j+l}) - u0'(x_j)| / (l dx)^kappa for l = 1..max_lag."""
        d = self.derivative_samples
        max_lag = min(max_lag, len(d) - 1)
        return np.array(
            [np.max(np.abs(d[l:] - d[:-l])) / (l * dx) ** self.holder_kappa for l in range(1, max_lag + 1)]
        )

    def check_holder(self, dx: float, growth: float = 4.0) -> bool:
        """False (with a warning) if the lag-1 quotient dwarfs the coarsest one.

        A genuinely kappa-Hoelder derivative gives quotients that do not grow
        as the lag shrinks; a jump in u0' makes them scale like (lag dx)^-kappa.
        """
        q = self.holder_quotients(dx)
        ref = q[-1]
        ok = bool(q[0] <= growth * ref or q[0] == 0.0)
        if not ok:
            warnings.warn(
                f"u0' does not look {self.holder_kappa}-Hoelder on this grid "
                f"(lag-1 quotient {q[0]:.3g} vs {ref:.3g})",
                stacklevel=2,
            )
        return ok


def initial_convolution(u0: InitialData, t: float, grid: GridSpec, tol: float = 1e-4) -> np.ndarray:
    """int_0^L p(t, x, y) u0(y) dy on the space grid.

    Below half a time step the kernel is narrower than a cell and the
    samples are returned unchanged.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if len(u0.samples) != grid.n_x + 1:
        raise ValueError("initial data not sampled on this grid")
    if t < 0.5 * grid.dt:
        return u0.samples.copy()
    err = quadrature_error(t, grid)
    if err > tol:
        warnings.warn(
            f"heat kernel at t={t:.3g} under-resolved by dx={grid.dx:.3g} (mass error {err:.2e})",
            AccuracyWarning,
            stacklevel=2,
        )
    return kernel_matrix(KernelKind.P, t, grid) @ u0.samples


def semigroup_error(s: float, t: float, grid: GridSpec, x_max: float | None = None) -> float:
    """max |int p(s,x,z) p(t-s,z,y) dz - p(t,x,y)| over interior node pairs."""
    if not 0 < s < t:
        raise ValueError("need 0 < s < t")
    x = grid.x
    if x_max is None:
        x_max = grid.L - 6.0 * math.sqrt(t)
    inner = x <= x_max
    composed = kernel_matrix(KernelKind.P, s, grid) @ kernel(KernelKind.P, t - s, x[:, None], x[None, :])
    direct = kernel(KernelKind.P, t, x[:, None], x[None, :])
    return float(np.max(np.abs(composed - direct)[np.ix_(inner, inner)]))
