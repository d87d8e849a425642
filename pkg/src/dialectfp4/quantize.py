"""Block quantization: the dialect path plus the MX and NV FP4 baselines.

Dialect codes pack a sign bit and a 3-bit index into the selected dialect's
ascending value list (nibble = sign << 3 | index).  The MX/NV baselines use
standard FP4 E2M1 nibbles (bit 3 sign, bits 2..1 exponent, bit 0 mantissa),
whose eight magnitudes in half-units are 0, 1, 2, 3, 4, 6, 8, 12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .fixedpoint import (
    QUARTER_CODE_MAX,
    SharedExponent,
    _validate_block,
    preprocess_block,
    shared_exponent,
)
from .formatbook import NUM_DIALECTS, DialectValueSet, Formatbook
from .selection import select_dialect_two_stage

ZERO_BLOCK_DIALECT = 15

# FP4 E2M1 magnitudes, in half-units and as reals, indexed by the 3
# magnitude bits of the nibble.
FP4_MAGNITUDES_HALF = (0, 1, 2, 3, 4, 6, 8, 12)
FP4_MAGNITUDES = tuple(v * 0.5 for v in FP4_MAGNITUDES_HALF)
FP4_MAX = 6.0

E4M3_MAX = 448.0


def _build_e4m3_tables() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decode table for all 256 E4M3 bytes plus sorted non-negative values.

    The encoding has 4 exponent bits (bias 7), 3 mantissa bits, no
    infinities, and NaN only at exponent 15 / mantissa 7.
    """
    decode = np.full(256, np.nan, dtype=np.float64)
    for byte in range(256):
        sign = -1.0 if byte & 0x80 else 1.0
        exp_field = (byte >> 3) & 0xF
        mant = byte & 0x7
        if exp_field == 0xF and mant == 0x7:
            continue  # NaN
        if exp_field == 0:
            value = mant / 8.0 * 2.0 ** (-6)
        else:
            value = (1.0 + mant / 8.0) * 2.0 ** (exp_field - 7)
        decode[byte] = sign * value
    nonneg_bytes = np.arange(127, dtype=np.uint8)  # 0x00..0x7E, ascending values
    nonneg_values = decode[nonneg_bytes.astype(np.int64)]
    return decode, nonneg_values, nonneg_bytes


E4M3_DECODE, E4M3_SORTED_VALUES, E4M3_SORTED_BYTES = _build_e4m3_tables()


def e4m3_decode(byte: int) -> float:
    value = E4M3_DECODE[byte & 0xFF]
    if np.isnan(value):
        raise InputError(f"byte 0x{byte:02x} is an E4M3 NaN encoding")
    return float(value)


def e4m3_encode(value: float) -> int:
    """Nearest non-negative E4M3 byte, ties to even, saturating at 448."""
    if value < 0 or not np.isfinite(value):
        raise InputError(f"E4M3 scale must be finite and non-negative: {value}")
    if value >= E4M3_MAX:
        return int(E4M3_SORTED_BYTES[-1])
    hi = int(np.searchsorted(E4M3_SORTED_VALUES, value))
    if hi == 0:
        return 0
    lo = hi - 1
    d_lo = value - E4M3_SORTED_VALUES[lo]
    d_hi = E4M3_SORTED_VALUES[hi] - value
    if d_lo < d_hi:
        return int(E4M3_SORTED_BYTES[lo])
    if d_hi < d_lo:
        return int(E4M3_SORTED_BYTES[hi])
    # Tie: even significand wins; adjacent bytes differ in the low bit.
    return int(E4M3_SORTED_BYTES[lo if E4M3_SORTED_BYTES[lo] % 2 == 0 else hi])


# FP4 round-to-nearest-even boundaries (exact binary fractions).
_FP4_BOUNDS = (0.25, 0.75, 1.25, 1.75, 2.5, 3.5, 5.0)


def fp4_rne_index(magnitude: float) -> int:
    """Index of the nearest FP4 magnitude, round-to-nearest-even, saturating."""
    idx = 0
    for i, bound in enumerate(_FP4_BOUNDS):
        if magnitude > bound:
            idx = i + 1
        elif magnitude == bound:
            # Tie: even-mantissa targets alternate; odd boundary index rounds up.
            if i % 2 == 1:
                idx = i + 1
            break
        else:
            break
    return idx


@dataclass(frozen=True)
class Code:
    """One quantized element: sign bit plus 3-bit index into the dialect."""

    sign: int
    index: int

    def __post_init__(self) -> None:
        if self.sign not in (0, 1) or not 0 <= self.index <= 7:
            raise InputError(f"invalid code ({self.sign}, {self.index})")
        if self.index == 0 and self.sign != 0:
            raise InputError("zero magnitude must carry sign 0")

    @property
    def nibble(self) -> int:
        return (self.sign << 3) | self.index


def _pack_nibbles(signs: np.ndarray, indices: np.ndarray) -> np.ndarray:
    return ((signs.astype(np.uint8) << 3) | indices.astype(np.uint8)).astype(np.uint8)


@dataclass(eq=False)
class QuantizedBlock:
    """A block in dialect form: shared exponent, dialect id, element nibbles."""

    scale: SharedExponent
    dialect: int
    codes: np.ndarray  # uint8 nibbles, sign << 3 | index

    def __len__(self) -> int:
        return len(self.codes)

    def signs(self) -> np.ndarray:
        return (self.codes >> 3) & 1

    def indices(self) -> np.ndarray:
        return self.codes & 0x7


@dataclass(eq=False)
class MxBlock:
    """MXFP4 block: power-of-two scale exponent plus FP4 E2M1 nibbles."""

    scale: SharedExponent
    codes: np.ndarray

    def __len__(self) -> int:
        return len(self.codes)


@dataclass(eq=False)
class NvBlock:
    """NVFP4 block: an E4M3 scale byte plus FP4 E2M1 nibbles."""

    scale_bits: int
    codes: np.ndarray

    def __len__(self) -> int:
        return len(self.codes)


def quantize_element(q: int, values: DialectValueSet) -> int:
    """Nearest-value index for a quarter code, midpoint ties to the larger.

    The interval quantizing to index i is [v[i-1]+v[i], v[i]+v[i+1]) in
    quarter codes (0 below, 32 above), i.e. intervals are closed at the
    lower midpoint.
    """
    if not 0 <= q <= QUARTER_CODE_MAX:
        raise InputError(f"quarter code {q} outside [0, 31]")
    idx = 0
    vals = values.values
    for i in range(7):
        if q >= vals[i] + vals[i + 1]:
            idx = i + 1
        else:
            break
    return idx


def quantize_block(block, fb: Formatbook) -> QuantizedBlock:
    """Quantize one block end to end with two-stage dialect selection.

    Composes shared_exponent, Q3.2 preprocessing, the two-stage selector,
    and per-element nearest-value coding.  An all-zero block maps to
    dialect 15 with all-zero codes.
    """
    scale = shared_exponent(block)
    pre = preprocess_block(block, scale)
    if scale.zero_block:
        return QuantizedBlock(
            scale=scale,
            dialect=ZERO_BLOCK_DIALECT,
            codes=np.zeros(len(pre), dtype=np.uint8),
        )
    dialect = select_dialect_two_stage(pre, fb)
    return _encode_with_dialect(pre, dialect, fb)


def quantize_block_with_dialect(
    block, scale: SharedExponent, dialect: int, fb: Formatbook
) -> QuantizedBlock:
    """Quantize a block with the dialect fixed by the caller (weight path)."""
    if not 0 <= dialect < NUM_DIALECTS:
        raise InputError(f"dialect id {dialect} outside [0, 15]")
    pre = preprocess_block(block, scale)
    if scale.zero_block:
        return QuantizedBlock(
            scale=scale, dialect=dialect, codes=np.zeros(len(pre), dtype=np.uint8)
        )
    return _encode_with_dialect(pre, dialect, fb)


def _encode_with_dialect(pre, dialect: int, fb: Formatbook) -> QuantizedBlock:
    thresholds = fb.tables.thresholds[dialect]
    indices = np.searchsorted(thresholds, pre.mags.astype(np.int64), side="right")
    signs = (pre.signs.astype(bool) & (indices > 0)).astype(np.uint8)
    return QuantizedBlock(
        scale=pre.scale,
        dialect=dialect,
        codes=_pack_nibbles(signs, indices),
    )


def dequantize_block(qb: QuantizedBlock, fb: Formatbook) -> np.ndarray:
    """Reconstruct reals: (-1)^sign * value[index] * 0.5 * 2^se."""
    if qb.scale.zero_block:
        return np.zeros(len(qb), dtype=np.float64)
    values = fb.tables.values[qb.dialect]
    half_units = values[qb.indices().astype(np.int64)].astype(np.float64)
    magnitudes = np.ldexp(half_units, qb.scale.value - 1)
    return np.where(qb.signs() == 1, -magnitudes, magnitudes)


def quantize_block_mx(block) -> MxBlock:
    """MXFP4 baseline: shared power-of-two scale, RNE FP4 elements.

    The scale exponent is floor(log2 max|x|) - 2; elements are rounded to
    the nearest FP4 value of x / 2^se, saturating at +-6.
    """
    arr = _validate_block(block)
    scale = shared_exponent(arr)
    if scale.zero_block:
        return MxBlock(scale=scale, codes=np.zeros(arr.size, dtype=np.uint8))
    scaled = np.ldexp(np.abs(arr), -scale.value)
    indices = np.array([fp4_rne_index(v) for v in scaled], dtype=np.uint8)
    signs = ((arr < 0) & (indices > 0)).astype(np.uint8)
    return MxBlock(scale=scale, codes=_pack_nibbles(signs, indices))


def dequantize_block_mx(mb: MxBlock) -> np.ndarray:
    if mb.scale.zero_block:
        return np.zeros(len(mb), dtype=np.float64)
    half_units = np.array(FP4_MAGNITUDES_HALF, dtype=np.float64)[mb.codes & 0x7]
    magnitudes = np.ldexp(half_units, mb.scale.value - 1)
    return np.where((mb.codes >> 3) & 1 == 1, -magnitudes, magnitudes)


def quantize_block_nv(block) -> NvBlock:
    """NVFP4 baseline: E4M3 scale byte, RNE FP4 elements, saturating."""
    arr = _validate_block(block)
    amax = float(np.max(np.abs(arr)))
    if amax == 0.0:
        return NvBlock(scale_bits=0, codes=np.zeros(arr.size, dtype=np.uint8))
    scale_bits = e4m3_encode(min(amax / FP4_MAX, E4M3_MAX))
    decoded = e4m3_decode(scale_bits)
    if decoded == 0.0:
        # Scale underflowed to zero: nothing representable, code the block as zero.
        return NvBlock(scale_bits=0, codes=np.zeros(arr.size, dtype=np.uint8))
    scaled = np.abs(arr) / decoded
    indices = np.array([fp4_rne_index(v) for v in scaled], dtype=np.uint8)
    signs = ((arr < 0) & (indices > 0)).astype(np.uint8)
    return NvBlock(scale_bits=scale_bits, codes=_pack_nibbles(signs, indices))


def dequantize_block_nv(nb: NvBlock) -> np.ndarray:
    decoded = e4m3_decode(nb.scale_bits)
    fp4 = np.array(FP4_MAGNITUDES, dtype=np.float64)[nb.codes & 0x7]
    magnitudes = fp4 * decoded
    return np.where((nb.codes >> 3) & 1 == 1, -magnitudes, magnitudes)


def block_mse(original, dequantized) -> float:
    """Mean squared error between a block and its reconstruction."""
    a = np.asarray(original, dtype=np.float64).reshape(-1)
    b = np.asarray(dequantized, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise InputError(f"length mismatch: {a.size} vs {b.size}")
    diff = b - a
    return float(np.mean(diff * diff))
