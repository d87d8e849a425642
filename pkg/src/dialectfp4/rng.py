"""Seeded, position-based random tensors for reproducible runs.

The generator is SplitMix64: output i of stream ``seed`` is
mix(seed + (i+1) * GAMMA) with the standard finalizer.  Uniform deviates
take the top 53 bits as the binary64 mantissa; Gaussians come from
Box-Muller pairs; Student-t(3) divides a Gaussian by a 3-sample chi.
Everything is computed from the draw index, so results do not depend on
call batching.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Deterministic 64-bit generator; one instance per stream."""

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._pos = 0

    def raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._pos + 1, self._pos + n + 1, dtype=np.uint64)
        self._pos += n
        with np.errstate(over="ignore"):
            return _mix((self._seed + idx * _GAMMA) & _MASK)

    def uniform(self, n: int) -> np.ndarray:
        """n deviates in [0, 1) with 53-bit resolution."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def gaussian(self, n: int) -> np.ndarray:
        """n standard normal deviates (Box-Muller)."""
        pairs = (n + 1) // 2
        u1 = self.uniform(pairs)
        u2 = self.uniform(pairs)
        radius = np.sqrt(-2.0 * np.log(1.0 - u1))
        angle = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def student_t(self, n: int, dof: int = 3) -> np.ndarray:
        """n Student-t deviates with the given degrees of freedom."""
        g = self.gaussian((dof + 1) * n).reshape(n, dof + 1)
        z = g[:, 0]
        chi = np.sum(g[:, 1:] * g[:, 1:], axis=1)
        return np.where(chi > 0.0, z / np.sqrt(chi / dof), 0.0)


def gaussian_matrix(seed: int, rows: int, cols: int, scale: float = 1.0) -> np.ndarray:
    return scale * SplitMix64(seed).gaussian(rows * cols).reshape(rows, cols)


def student_t_matrix(
    seed: int, rows: int, cols: int, dof: int = 3, scale: float = 1.0
) -> np.ndarray:
    return scale * SplitMix64(seed).student_t(rows * cols, dof).reshape(rows, cols)


def uniform_matrix(seed: int, rows: int, cols: int, scale: float = 1.0) -> np.ndarray:
    return scale * SplitMix64(seed).uniform(rows * cols).reshape(rows, cols)
