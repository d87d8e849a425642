"""Preprocessing: shared exponents and the 5-bit Q3.2 intermediate form.

A block is scaled by a power of two so its maximum magnitude lands in
[4, 8); each element magnitude is then truncated to a 5-bit code counting
quarter units (3 integer bits, 2 fractional bits).  All downstream dialect
selection and quantization operates on these quarter codes.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import frexp

import numpy as np

from .errors import InputError

QUARTER_CODE_MAX = 31
MAX_BLOCK_LEN = 64

# Serialized shared exponents are signed 8-bit; -128 marks an all-zero block.
SE_MIN, SE_MAX = -127, 127
ZERO_BLOCK_SENTINEL = -128


@dataclass(frozen=True)
class SharedExponent:
    """Per-block power-of-two scale; zero_block marks an all-zero block."""

    value: int
    zero_block: bool = False


@dataclass
class PreprocessedBlock:
    """Sign bits and quarter codes for one block, plus its shared exponent."""

    signs: np.ndarray  # uint8, one per element
    mags: np.ndarray   # uint8 quarter codes in [0, 31]
    scale: SharedExponent

    def __len__(self) -> int:
        return len(self.mags)


def _validate_block(block: np.ndarray) -> np.ndarray:
    arr = np.asarray(block, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        raise InputError("empty block")
    if arr.size > MAX_BLOCK_LEN:
        raise InputError(f"block length {arr.size} exceeds {MAX_BLOCK_LEN}")
    if not np.all(np.isfinite(arr)):
        raise InputError("block contains NaN or infinity")
    return arr


def shared_exponent(block) -> SharedExponent:
    """Shared exponent of a block: floor(log2(max |x|)) - 2.

    Subtracting 2 places the scaled maximum in [4, 8).  An all-zero block
    yields zero_block=True.

    Raises:
        InputError: on NaN/infinity, an empty block, or an exponent that
            does not fit the 8-bit serialized range.
    """
    arr = _validate_block(block)
    amax = float(np.max(np.abs(arr)))
    if amax == 0.0:
        return SharedExponent(value=0, zero_block=True)
    # frexp gives amax = m * 2**e with m in [0.5, 1), so floor(log2) = e - 1.
    _, exp = frexp(amax)
    value = exp - 3
    if not SE_MIN <= value <= SE_MAX:
        raise InputError(f"shared exponent {value} outside serializable range")
    return SharedExponent(value=value)


def preprocess_block(block, scale: SharedExponent) -> PreprocessedBlock:
    """Truncate block magnitudes to quarter codes under the shared exponent.

    Each element maps to min(floor(|x| / 2**se * 4), 31); signs are carried
    separately, with the sign of a zero-magnitude code forced to 0.
    """
    arr = _validate_block(block)
    if scale.zero_block:
        n = arr.size
        return PreprocessedBlock(
            signs=np.zeros(n, dtype=np.uint8),
            mags=np.zeros(n, dtype=np.uint8),
            scale=scale,
        )
    scaled = np.ldexp(np.abs(arr), 2 - scale.value)
    mags = np.minimum(np.floor(scaled), QUARTER_CODE_MAX).astype(np.uint8)
    signs = ((arr < 0) & (mags > 0)).astype(np.uint8)
    return PreprocessedBlock(signs=signs, mags=mags, scale=scale)


def round_to_half(q: int) -> int:
    """Round a quarter code to half units, ties up, clamped to 15 (7.5)."""
    if not 0 <= q <= QUARTER_CODE_MAX:
        raise InputError(f"quarter code {q} outside [0, 31]")
    return min((q + 1) >> 1, 15)
