"""Space-time lattice on [0, T] x [0, L]."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Gaussian tail beyond this many standard deviations is below 1e-8.
TRUNCATION_SIGMAS = 6.0


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid with nodes t_i = i*dt (i <= n_t) and x_j = j*dx (j <= n_x)."""

    T: float
    L: float
    n_t: int
    n_x: int

    def __post_init__(self):
        if not (self.T > 0 and self.L > 0):
            raise ValueError(f"T and L must be positive, got T={self.T}, L={self.L}")
        if self.n_t < 2 or self.n_x < 2:
            raise ValueError(f"need n_t >= 2 and n_x >= 2, got {self.n_t}, {self.n_x}")

    @classmethod
    def covering(cls, T: float, x_max: float, n_t: int, n_x: int) -> "GridSpec":
        """Grid whose truncation length leaves 6 sqrt(T) of margin beyond ``x_max``."""
        return cls(T, x_max + TRUNCATION_SIGMAS * math.sqrt(T), n_t, n_x)

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def dx(self) -> float:
        return self.L / self.n_x

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_t + 1) * self.dt

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_x + 1) * self.dx

    @property
    def t_mid(self) -> np.ndarray:
        return (np.arange(self.n_t) + 0.5) * self.dt

    @property
    def x_mid(self) -> np.ndarray:
        return (np.arange(self.n_x) + 0.5) * self.dx

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_t + 1, self.n_x + 1)

    def interior_x(self, sigmas: float = 3.0) -> np.ndarray:
        """Space nodes at least ``sigmas`` sqrt(T) away from the truncation edge.

        Within that band the truncated solution depends on how mass beyond
        L is discarded, so norms and comparisons leave it out.
        """
        return self.x <= self.L - sigmas * math.sqrt(self.T) + 1e-12

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_x + 1, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def as_dict(self) -> dict:
        return {"T": self.T, "L": self.L, "n_t": self.n_t, "n_x": self.n_x}
