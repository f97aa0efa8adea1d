"""Estimators that turn ensembles of fields and solutions into checkable numbers."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .fractional_noise import FieldSample, HurstPair, covariance
from .grid import GridSpec


class Axis(enum.Enum):
    TIME = "time"
    SPACE = "space"


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    ci_halfwidth: float  # 95%, from regression residuals

    def contains(self, value: float) -> bool:
        return abs(self.slope - value) <= self.ci_halfwidth


@dataclass(frozen=True)
class StructureFunction:
    lags: np.ndarray  # physical lag lengths
    moments: np.ndarray  # E|f(. + lag) - f(.)|^2
    axis: Axis
    q: int = 2

    def __post_init__(self):
        if np.any(np.diff(self.lags) <= 0):
            raise ValueError("lags must be strictly increasing")
        if np.any(self.moments < 0):
            raise ValueError("moments must be non-negative")


@dataclass(frozen=True)
class HolderEstimate:
    """Hoelder exponent = slope / 2 of the log-log structure function."""

    exponent: float
    ci_halfwidth: float
    fit: SlopeFit

    def overlaps(self, lo: float, hi: float) -> bool:
        """True if [exponent - ci, exponent + ci] meets the open interval (lo, hi)."""
        return self.exponent - self.ci_halfwidth < hi and self.exponent + self.ci_halfwidth > lo


def fit_loglog(x, y) -> SlopeFit:
    """Least squares of log y on log x with a 95% t-interval on the slope."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    n = len(lx)
    if n < 3:
        raise ValueError("need at least three points for a slope fit")
    res = stats.linregress(lx, ly)
    ci = float(stats.t.ppf(0.975, n - 2) * res.stderr)
    return SlopeFit(float(res.slope), float(res.intercept), float(res.rvalue**2), ci)


def default_lags(n: int, min_lag: int = 2, max_fraction: float = 1 / 8, count: int = 8) -> np.ndarray:
    """Log-spaced integer lags from ``min_lag`` up to n * max_fraction.

    The smallest grid lag is skipped (aliasing) and long lags average over
    too few independent pairs.
    """
    hi = max(int(n * max_fraction), min_lag + 3)
    lags = np.unique(np.round(np.geomspace(min_lag, hi, count)).astype(int))
    return lags


def _as_ensemble(ensemble, attr: str) -> np.ndarray:
    if isinstance(ensemble, np.ndarray):
        arr = np.asarray(ensemble, dtype=float)
    else:
        members = list(ensemble)
        if not members:
            raise ValueError("empty ensemble")
        if isinstance(members[0], FieldSample):
            arr = np.stack([m.values for m in members])
        elif hasattr(members[0], attr):
            arr = np.stack([getattr(m, attr) for m in members])
        else:
            arr = np.stack([np.asarray(m, dtype=float) for m in members])
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError("expected fields of shape (n_t+1, n_x+1) or a stack of them")
    return arr


def structure_function(
    ensemble,
    axis: Axis,
    lags: Sequence[int],
    interior_mask: np.ndarray | None = None,
    step: float = 1.0,
    attr: str = "u",
) -> StructureFunction:
    """Second-order structure function along one axis.

    ``ensemble`` is a field, a stack of fields, or a list of FieldSample /
    SolutionField (``attr`` picks ``u`` or ``companion``). ``lags`` are in
    grid steps; ``step`` converts them to physical lags. A pair contributes
    only if both of its nodes lie in ``interior_mask``.
    """
    arr = _as_ensemble(ensemble, attr)
    if interior_mask is None:
        interior_mask = np.ones(arr.shape[1:], dtype=bool)
    mask = np.asarray(interior_mask, dtype=bool)
    if mask.shape != arr.shape[1:]:
        raise ValueError("interior_mask does not match the field shape")
    if not mask.any():
        raise ValueError("interior_mask selects no nodes")
    lags = np.asarray(lags, dtype=int)
    ax = 1 if axis is Axis.TIME else 2
    moments = []
    for lag in lags:
        if lag <= 0 or lag >= arr.shape[ax]:
            raise ValueError(f"lag {lag} outside the grid")
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax] = slice(None, -lag)
        hi[ax] = slice(lag, None)
        pair = mask[tuple(lo[1:])] & mask[tuple(hi[1:])]
        if not pair.any():
            raise ValueError(f"no interior pairs at lag {lag}")
        diff = arr[tuple(hi)] - arr[tuple(lo)]
        moments.append(float(np.mean(diff[:, pair] ** 2)))
    return StructureFunction(lags * step, np.array(moments), axis)


def holder_exponent(sf: StructureFunction) -> HolderEstimate:
    if len(sf.lags) < 4:
        raise ValueError("need at least 4 lags for a Hoelder fit")
    if np.any(sf.moments <= 0):
        raise ValueError("degenerate field: zero structure-function moment")
    fit = fit_loglog(sf.lags, sf.moments)
    return HolderEstimate(fit.slope / 2.0, fit.ci_halfwidth / 2.0, fit)


@dataclass(frozen=True)
class CovarianceCheck:
    nodes: list[tuple[int, int]]
    empirical: np.ndarray
    analytic: np.ndarray
    standard_error: np.ndarray
    n_samples: int
    threshold: float = 4.0

    @property
    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.empirical - self.analytic)))

    @property
    def exceedance_matrix(self) -> np.ndarray:
        return np.abs(self.empirical - self.analytic) > self.threshold * self.standard_error

    @property
    def exceedances(self) -> int:
        """Exceedances among distinct entries (upper triangle incl. diagonal)."""
        return int(np.sum(np.triu(self.exceedance_matrix)))

    @property
    def n_entries(self) -> int:
        k = len(self.nodes)
        return k * (k + 1) // 2

    @property
    def false_positive_rate(self) -> float:
        return float(2 * stats.norm.sf(self.threshold))

    @property
    def expected_false_positives(self) -> float:
        return self.n_entries * self.false_positive_rate


def empirical_covariance(
    fields,
    nodes: Sequence[tuple[int, int]],
    hurst: HurstPair,
    grid: GridSpec,
    threshold: float = 4.0,
) -> CovarianceCheck:
    """Zero-mean sample covariance at ``nodes`` against the analytic R.

    Standard errors come from the empirical fourth moments,
    se_ab^2 = (mean(x_a^2 x_b^2) - C_ab^2) / M.
    """
    arr = _as_ensemble(fields, "values")
    m = arr.shape[0]
    if m < 100:
        raise ValueError(f"need at least 100 samples, got {m}")
    idx = np.array(nodes, dtype=int)
    x = arr[:, idx[:, 0], idx[:, 1]]
    emp = x.T @ x / m
    x2 = x * x
    fourth = x2.T @ x2 / m
    se = np.sqrt(np.clip(fourth - emp * emp, 0.0, None) / m)
    t = grid.t[idx[:, 0]]
    xs = grid.x[idx[:, 1]]
    ana = covariance(hurst, t[:, None], t[None, :], xs[:, None], xs[None, :])
    return CovarianceCheck([tuple(map(int, n)) for n in idx], emp, ana, se, m, threshold)


def subset_nodes(grid: GridSpec, k: int, include_axes: bool = False) -> list[tuple[int, int]]:
    """k x k nodes spread evenly over the grid (interior only unless ``include_axes``)."""
    lo = 0 if include_axes else 1
    ti = np.unique(np.round(np.linspace(lo, grid.n_t, k)).astype(int))
    xi = np.unique(np.round(np.linspace(lo, grid.n_x, k)).astype(int))
    return [(int(i), int(j)) for i in ti for j in xi]


def _hurst_guard(hurst):
    if hurst is None:
        return
    for h in hurst:
        if not h > 0.5:
            raise ValueError(f"Hurst index {h} <= 1/2 is outside the supported range")


def variance_profile(convolutions: np.ndarray, x_index: int) -> np.ndarray:
    """Ensemble variance at space node ``x_index`` for every time node."""
    arr = _as_ensemble(convolutions, "u")
    return np.var(arr[:, :, x_index], axis=0, ddof=1)


def variance_growth_slope(
    convolutions: np.ndarray,
    grid: GridSpec,
    x_index: int,
    hurst=None,
    window: tuple[float, float] = (0.25, 1.0),
) -> SlopeFit:
    """Slope of log Var vs log t over the window [T/4, T]; target 2 h1 + h2 - 1."""
    _hurst_guard(hurst)
    arr = _as_ensemble(convolutions, "u")
    if arr.shape[0] < 100:
        raise ValueError(f"need at least 100 samples, got {arr.shape[0]}")
    if not 0 < x_index < grid.n_x:
        raise ValueError("x_index must be an interior node")
    t = grid.t
    sel = (t >= window[0] * grid.T - 1e-12) & (t <= window[1] * grid.T + 1e-12) & (t > 0)
    if sel.sum() < 5:
        raise ValueError("fewer than 5 time points in the fit window")
    var = variance_profile(arr, x_index)[sel]
    if np.any(var <= 0):
        raise ValueError("degenerate variance in the fit window")
    return fit_loglog(t[sel], var)


@dataclass(frozen=True)
class ThetaRateFit:
    fit: SlopeFit
    n_pairs: int
    monotone: bool

    @property
    def rate(self) -> float:
        return self.fit.slope


def theta_rate_fit(sweep, rel_tol: float = 0.1) -> ThetaRateFit:
    """Fit log distance against log |theta_1 - theta_2| over all distinct pairs.

    Pairs with equal theta are dropped. ``monotone`` is False (and a
    warning issued) when a larger |dtheta| gives a distance smaller by more
    than ``rel_tol`` than some smaller |dtheta|.
    """
    thetas = np.asarray(sweep.thetas, dtype=float)
    d = np.asarray(sweep.pairwise_d2, dtype=float)
    gaps, dist = [], []
    for a in range(len(thetas)):
        for b in range(a + 1, len(thetas)):
            gap = abs(thetas[a] - thetas[b])
            if gap > 0 and d[a, b] > 0:
                gaps.append(gap)
                dist.append(d[a, b])
    if len(gaps) < 3:
        raise ValueError("need at least three distinct theta pairs")
    order = np.argsort(gaps, kind="stable")
    g = np.array(gaps)[order]
    dd = np.array(dist)[order]
    running = np.maximum.accumulate(dd)
    monotone = bool(np.all(dd >= (1 - rel_tol) * running))
    if not monotone:
        warnings.warn("theta-sweep distances are not monotone in |dtheta|", stacklevel=2)
    return ThetaRateFit(fit_loglog(g, dd), len(g), monotone)
