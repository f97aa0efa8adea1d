"""Two-parameter fractional Brownian field: covariance, exact sampling, integrals.

The field B^H(t, x) with Hurst pair H = (h1, h2) is the centred Gaussian
field whose covariance factorises into two one-dimensional fBm covariances,

    R(t, s; x, y) = R_h1(t, s) * R_h2(x, y),
    R_h(a, b)     = (a^2h + b^2h - |a - b|^2h) / 2.

Because of the product structure the covariance matrix on a tensor grid is
a Kronecker product, so a sample is L_t Z L_x^T with Cholesky factors of the
two small axis matrices and an i.i.d. normal matrix Z.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import beta as beta_fn

from .grid import GridSpec
from .rng import standard_normal

__all__ = [
    "HurstPair",
    "GridSpec",
    "FieldSample",
    "CellIncrements",
    "cov_1d",
    "covariance",
    "axis_factor",
    "sample_field",
    "sample_fields",
    "sample_fbm_paths",
    "cell_increments",
    "increment_covariance",
    "implied_covariance",
    "assembled_covariance",
    "psi_prefactor",
    "psi_kernel",
    "lh2_inner",
    "mixed_norm",
    "integrate_deterministic",
    "kh_eval",
    "kh_star_indicator",
    "kh_inner",
    "calibrate_c_h",
    "analytic_c_h",
]


class SingularityError(ValueError):
    """Kernel evaluated on its diagonal singularity."""


@dataclass(frozen=True)
class HurstPair:
    """Hurst pair (h1, h2) for time and space.

    The default constructor enforces both parts of the admissibility
    hypothesis: each h in (1/2, 1) and 2 h1 + h2 > 2. ``HurstPair.relaxed``
    drops the sum condition for sampling-only use.
    """

    h1: float
    h2: float
    admissible: bool = field(default=True, compare=False)

    def __post_init__(self):
        for name, h in (("h1", self.h1), ("h2", self.h2)):
            if not 0.5 < h < 1.0:
                raise ValueError(f"{name}={h} outside (1/2, 1)")
        if self.admissible and not 2.0 * self.h1 + self.h2 > 2.0:
            raise ValueError(
                f"2*h1 + h2 = {2 * self.h1 + self.h2:g} must exceed 2 for the solver; "
                "use HurstPair.relaxed(...) for sampling only"
            )

    @classmethod
    def relaxed(cls, h1: float, h2: float) -> "HurstPair":
        return cls(h1, h2, admissible=False)

    @property
    def growth_exponent(self) -> float:
        """Exponent of the variance growth t^(2 h1 + h2 - 1) of the stochastic convolution."""
        return 2.0 * self.h1 + self.h2 - 1.0

    def __iter__(self):
        yield self.h1
        yield self.h2


def _check_h(h):
    if not 0.0 < h < 1.0:
        raise ValueError(f"Hurst index {h} outside (0, 1)")


def cov_1d(h: float, a, b):
    """Covariance of one-dimensional fBm, (a^2h + b^2h - |a-b|^2h) / 2."""
    _check_h(h)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("fBm covariance needs non-negative arguments")
    out = 0.5 * (a ** (2 * h) + b ** (2 * h) - np.abs(a - b) ** (2 * h))
    return out.item() if out.ndim == 0 else out


def covariance(h: HurstPair, t, s, x, y):
    return cov_1d(h.h1, t, s) * cov_1d(h.h2, x, y)


# --------------------------------------------------------------------------
# exact sampling


@functools.lru_cache(maxsize=64)
def axis_factor(h: float, extent: float, n: int) -> np.ndarray:
    """Lower factor F with F F^T = [R_h(a_i, a_j)], a_i = i * extent / n, i = 1..n.

    The zero node is left out because its row and column vanish. If the
    matrix is numerically indefinite the factor comes from a clipped
    eigendecomposition instead. The returned array is read-only and shared.
    """
    nodes = np.arange(1, n + 1) * (extent / n)
    cov = cov_1d(h, nodes[:, None], nodes[None, :])
    try:
        fac = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        lam, vec = np.linalg.eigh(cov)
        clipped = -lam[lam < 0].sum()
        if clipped > 1e-8 * np.trace(cov):
            warnings.warn(f"clipped {clipped:.3g} of negative spectrum from fBm covariance", stacklevel=2)
        fac = vec * np.sqrt(np.clip(lam, 0.0, None))
    fac.setflags(write=False)
    return fac


@dataclass
class FieldSample:
    """B^H on the grid nodes: values[i, j] = B^H(t_i, x_j)."""

    values: np.ndarray
    hurst: HurstPair
    grid: GridSpec
    seed: int
    index: int = 0

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")


@dataclass
class CellIncrements:
    """Rectangular increments d2[i, j] of B^H over cell [t_i, t_i+1] x [x_j, x_j+1]."""

    d2: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        if self.d2.shape != (self.grid.n_t, self.grid.n_x):
            raise ValueError(f"increments shape {self.d2.shape} does not match grid cells")

    def prefix_sum(self) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        out[1:, 1:] = np.cumsum(np.cumsum(self.d2, axis=0), axis=1)
        return out

    @classmethod
    def zeros(cls, grid: GridSpec) -> "CellIncrements":
        return cls(np.zeros((grid.n_t, grid.n_x)), grid)

    def __add__(self, other: "CellIncrements") -> "CellIncrements":
        if other.grid != self.grid:
            raise ValueError("increments on different grids")
        return CellIncrements(self.d2 + other.d2, self.grid)


def sample_fields(h: HurstPair, grid: GridSpec, seed: int, n: int, start: int = 0) -> np.ndarray:
    """Stack of ``n`` fields, member k drawn from stream (seed, start + k)."""
    lt = axis_factor(h.h1, grid.T, grid.n_t)
    lx = axis_factor(h.h2, grid.L, grid.n_x)
    z = np.stack([standard_normal(seed, start + k, (grid.n_t, grid.n_x)) for k in range(n)])
    out = np.zeros((n,) + grid.shape)
    out[:, 1:, 1:] = lt @ z @ lx.T
    return out


def sample_field(h: HurstPair, grid: GridSpec, seed: int, index: int = 0) -> FieldSample:
    values = sample_fields(h, grid, seed, 1, start=index)[0]
    return FieldSample(values, h, grid, seed, index)


def sample_fbm_paths(h: float, n: int, T: float, n_paths: int, seed: int) -> np.ndarray:
    """One-dimensional fBm paths on n + 1 equispaced points of [0, T], shape (n_paths, n + 1)."""
    fac = axis_factor(h, T, n)
    z = np.stack([standard_normal(seed, k, n) for k in range(n_paths)])
    out = np.zeros((n_paths, n + 1))
    out[:, 1:] = z @ fac.T
    return out


def cell_increments(f: FieldSample) -> CellIncrements:
    return CellIncrements(np.diff(np.diff(f.values, axis=0), axis=1), f.grid)


def increment_covariance(h: float, nodes: np.ndarray) -> np.ndarray:
    """Exact covariance of fBm increments over consecutive intervals of ``nodes``.

    Entry (i, k) is E[(W(a_i+1) - W(a_i)) (W(a_k+1) - W(a_k))], equivalently
    h(2h-1) times the integral of |u - v|^(2h-2) over the two intervals.
    """
    a = np.asarray(nodes, dtype=float)
    lo, hi = a[:-1], a[1:]

    def g(p, q):
        return np.abs(p[:, None] - q[None, :]) ** (2 * h)

    return 0.5 * (g(hi, lo) + g(lo, hi) - g(hi, hi) - g(lo, lo))


def implied_covariance(h: HurstPair, grid: GridSpec) -> np.ndarray:
    """Covariance of the tensor sampler on interior nodes, (L_t kron L_x)(L_t kron L_x)^T."""
    lt = axis_factor(h.h1, grid.T, grid.n_t)
    lx = axis_factor(h.h2, grid.L, grid.n_x)
    big = np.kron(lt, lx)
    return big @ big.T


def assembled_covariance(h: HurstPair, grid: GridSpec) -> np.ndarray:
    """R at every pair of interior nodes (t > 0, x > 0), nodes in row-major order."""
    tt, xx = np.meshgrid(grid.t[1:], grid.x[1:], indexing="ij")
    t = tt.ravel()
    x = xx.ravel()
    return covariance(h, t[:, None], t[None, :], x[:, None], x[None, :])


# --------------------------------------------------------------------------
# L^2_H inner product and Wiener integrals of deterministic integrands


def psi_prefactor(h: HurstPair) -> float:
    return 4.0 * h.h1 * h.h2 * (2 * h.h1 - 1) * (2 * h.h2 - 1)


def psi_kernel(h: HurstPair, t, s, x, y):
    """4 h1 h2 (2h1-1)(2h2-1) |t-s|^(2h1-2) |x-y|^(2h2-2), off the diagonals."""
    dt = np.abs(np.asarray(t, dtype=float) - s)
    dx = np.abs(np.asarray(x, dtype=float) - y)
    if np.any(dt == 0) or np.any(dx == 0):
        raise SingularityError("psi_kernel is singular on t = s or x = y")
    out = psi_prefactor(h) * dt ** (2 * h.h1 - 2) * dx ** (2 * h.h2 - 2)
    return out.item() if out.ndim == 0 else out


def lh2_inner(f: np.ndarray, g: np.ndarray, h: HurstPair, grid: GridSpec) -> float:
    """<f, g> in L^2_H for integrands given at cell midpoints, shape (n_t, n_x).

    The weight that reproduces ``covariance`` on indicators is
    h1 h2 (2h1-1)(2h2-1) |t-s|^(2h1-2) |x-y|^(2h2-2), i.e. psi_kernel / 4.
    It is integrated exactly over every pair of cells; that integral is the
    covariance of the two cell increments and factorises over the axes.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    shape = (grid.n_t, grid.n_x)
    if f.shape != shape or g.shape != shape:
        raise ValueError(f"integrands must have shape {shape}")
    wt = increment_covariance(h.h1, grid.t)
    wx = increment_covariance(h.h2, grid.x)
    return float(np.sum(f * (wt @ g @ wx)))


def mixed_norm(f: np.ndarray, h: HurstPair, grid: GridSpec) -> float:
    """(int (||f(s, .)||_{L^(1/h2)})^(1/h1) ds)^h1 with midpoint sums.

    Its square bounds E[(int f dB^H)^2] up to a constant depending on H.
    """
    f = np.abs(np.asarray(f, dtype=float))
    row = (np.sum(f ** (1.0 / h.h2), axis=1) * grid.dx) ** h.h2
    return float((np.sum(row ** (1.0 / h.h1)) * grid.dt) ** h.h1)


def integrate_deterministic(f: np.ndarray, inc) -> np.ndarray | float:
    """sum_ij f(midpoint_ij) d2[i, j]; ``inc`` may also be a stack of increment arrays."""
    d2 = inc.d2 if isinstance(inc, CellIncrements) else np.asarray(inc, dtype=float)
    f = np.asarray(f, dtype=float)
    if d2.shape[-2:] != f.shape:
        raise ValueError(f"integrand shape {f.shape} does not match increments {d2.shape[-2:]}")
    out = np.einsum("ij,...ij->...", f, d2)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Kernel K_H of the Brownian-sheet representation (small-scale validation only)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def _kh_axis(h: float, t, s) -> np.ndarray:
    """s^(1/2-h) int_s^t (u-s)^(h-3/2) u^(h-1/2) du for 0 < s < t.

    With u = s + r^(1/(h-1/2)) the endpoint singularity cancels against the
    Jacobian and the integrand becomes u^(h-1/2) / (h-1/2) on
    r in [0, (t-s)^(h-1/2)].
    """
    a = h - 0.5
    t = np.asarray(t, dtype=float)[..., None]
    s = np.asarray(s, dtype=float)[..., None]
    r_max = (t - s) ** a
    r = 0.5 * r_max * (_GL_NODES + 1.0)
    u = s + r ** (1.0 / a)
    integral = 0.5 * r_max[..., 0] * np.sum(_GL_WEIGHTS * u**a, axis=-1) / a
    return s[..., 0] ** (-a) * integral


def kh_eval(h: HurstPair, t, s, x, y, c_h: float = 1.0):
    """K_H(t, s; x, y) for 0 < s < t and 0 < y < x."""
    t, s, x, y = (np.asarray(v, dtype=float) for v in (t, s, x, y))
    if np.any(~((0 < s) & (s < t))) or np.any(~((0 < y) & (y < x))):
        raise ValueError("kh_eval needs 0 < s < t and 0 < y < x")
    out = c_h * _kh_axis(h.h1, t, s) * _kh_axis(h.h2, x, y)
    return out.item() if out.ndim == 0 else out


def kh_star_indicator(h: HurstPair, t, x, s, y, c_h: float = 1.0):
    """(K_H^* 1_[0,t]x[0,x])(s, y): K_H(t, s; x, y) inside the open rectangle, 0 elsewhere."""
    s, y = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(y, dtype=float))
    inside = (0 < s) & (s < t) & (0 < y) & (y < x)
    out = np.zeros(s.shape)
    if np.any(inside):
        out[inside] = kh_eval(h, t, s[inside], x, y[inside], c_h)
    return out.item() if out.ndim == 0 else out


def _endpoint_rule(h: float, upper: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on (0, upper) adapted to s^(1-2h) at 0 and (upper-s)^(h-1/2) at the top.

    The lower half uses s = (upper/2) v^q with q = 1/(2-2h), the upper half
    s = upper - (upper/2) w^p with p = 1/(h+1/2); both Jacobians cancel the
    corresponding endpoint behaviour.
    """
    half = 0.5 * upper
    v = 0.5 * (_leg(n)[0] + 1.0)
    wv = 0.5 * _leg(n)[1]
    q = 1.0 / (2.0 - 2.0 * h)
    p = 1.0 / (h + 0.5)
    s_lo = half * v**q
    w_lo = wv * half * q * v ** (q - 1.0)
    s_hi = upper - half * v**p
    w_hi = wv * half * p * v ** (p - 1.0)
    return np.concatenate([s_lo, s_hi]), np.concatenate([w_lo, w_hi])


@functools.lru_cache(maxsize=8)
def _leg(n):
    return np.polynomial.legendre.leggauss(n)


def kh_inner(h: HurstPair, a: tuple[float, float], b: tuple[float, float], c_h: float = 1.0, n: int = 48) -> float:
    """<K_H^* 1_A, K_H^* 1_B> in L^2 for rectangles A = [0,a0]x[0,a1], B = [0,b0]x[0,b1].

    Tensor quadrature over (s, y) of the product of the two transferred
    indicators; both vanish outside the smaller rectangle.
    """
    ts = min(a[0], b[0])
    xs = min(a[1], b[1])
    s, ws = _endpoint_rule(h.h1, ts, n)
    y, wy = _endpoint_rule(h.h2, xs, n)
    ss, yy = np.meshgrid(s, y, indexing="ij")
    ka = kh_star_indicator(h, a[0], a[1], ss, yy, c_h)
    kb = kh_star_indicator(h, b[0], b[1], ss, yy, c_h)
    return float(ws @ (ka * kb) @ wy)


def calibrate_c_h(h: HurstPair, T: float, L: float) -> float:
    """c_H making ||K_H^* 1_[0,T]x[0,L]||^2 equal R(T, T; L, L)."""
    raw = kh_inner(h, (T, L), (T, L), 1.0)
    return math.sqrt(covariance(h, T, T, L, L) / raw)


def analytic_c_h(h: HurstPair) -> float:
    """Product of the one-dimensional constants sqrt(h (2h-1) / B(2-2h, h-1/2))."""
    out = 1.0
    for hi in h:
        out *= math.sqrt(hi * (2 * hi - 1) / beta_fn(2 - 2 * hi, hi - 0.5))
    return out
