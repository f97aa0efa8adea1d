"""Counter-based random streams.

Every draw in the package comes from a Philox generator whose 128-bit key
packs ``(seed, index)``: the low 64 bits hold the seed, the high 64 bits the
sample index. Streams for different indices are independent and can be
created in any order or on any worker without changing their contents.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def philox_key(seed: int, index: int = 0) -> int:
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    return ((index & _MASK64) << 64) | (seed & _MASK64)


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for ensemble member ``index`` of run ``seed``."""
    return np.random.Generator(np.random.Philox(key=philox_key(seed, index)))


def standard_normal(seed: int, index: int, shape) -> np.ndarray:
    # fills in C (row-major) order
    return stream(seed, index).standard_normal(shape)
