"""Scaled-integer MAC emulation and block-quantized matrix multiplication.

All element magnitudes are half-unit integers, so a block's dot product is
an exact signed integer accumulation; the 0.5 factor of each operand is an
exponent adjustment of -2 applied when the partial is converted to a real.
For power-of-two block scales (dialect and MX formats) the whole path is
exact in binary64, which makes the quantized GEMM bit-identical to
dequantize-then-multiply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .errors import InputError
from .fixedpoint import MAX_BLOCK_LEN
from .formatbook import Formatbook
from .quantize import (
    E4M3_DECODE,
    E4M3_SORTED_BYTES,
    E4M3_SORTED_VALUES,
    FP4_MAGNITUDES_HALF,
    QuantizedBlock,
)

FORMATS = ("dialect", "mx", "nv")


class AccumulatorMode(Enum):
    """Accumulation of block partials: exact binary64, or binary16 RNE."""

    EXACT = "exact"
    FP16 = "fp16"

    @classmethod
    def parse(cls, mode: "AccumulatorMode | str") -> "AccumulatorMode":
        if isinstance(mode, cls):
            return mode
        try:
            return cls(mode)
        except ValueError:
            raise InputError(f"unknown accumulator mode {mode!r}") from None


@dataclass(frozen=True)
class BlockPartial:
    """Integer dot product of one block pair plus the shared exponent sum."""

    acc: int
    exp_sum: int


@dataclass(eq=False)
class QuantizedMatrix:
    """A matrix partitioned into 1D blocks along one axis.

    Blocks run along ``axis``: axis=1 means each block covers block_size
    consecutive columns of one row (activation layout), axis=0 means
    block_size consecutive rows of one column (weight layout).  ``scale``
    holds per-block shared exponents (int8, -128 for an all-zero block)
    for dialect/mx, or E4M3 scale bytes (uint8) for nv.  ``dialect`` holds
    per-block dialect ids for the dialect format, None otherwise.
    ``codes`` holds one nibble per element.
    """

    fmt: str
    rows: int
    cols: int
    block_size: int
    axis: int
    scale: np.ndarray
    dialect: np.ndarray | None
    codes: np.ndarray

    @property
    def grid_shape(self) -> tuple[int, int]:
        if self.axis == 1:
            return (self.rows, self.cols // self.block_size)
        return (self.rows // self.block_size, self.cols)

    @property
    def num_blocks(self) -> int:
        gr, gc = self.grid_shape
        return gr * gc


def _validate_matrix_input(matrix) -> np.ndarray:
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"expected a 2D matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InputError("matrix contains NaN or infinity")
    return arr


def _check_blocking(rows: int, cols: int, block_size: int, axis: int) -> None:
    if not 1 <= block_size <= MAX_BLOCK_LEN:
        raise InputError(f"block size {block_size} outside [1, {MAX_BLOCK_LEN}]")
    if axis not in (0, 1):
        raise InputError(f"axis must be 0 or 1, got {axis}")
    contraction = cols if axis == 1 else rows
    if contraction % block_size != 0:
        raise InputError(
            f"contraction dimension {contraction} not divisible by block size "
            f"{block_size}"
        )


def _to_block_rows(arr: np.ndarray, block_size: int, axis: int) -> np.ndarray:
    """View the matrix as (num_blocks, block_size) in grid row-major order."""
    rows, cols = arr.shape
    if axis == 1:
        return arr.reshape(rows * (cols // block_size), block_size)
    return (
        arr.reshape(rows // block_size, block_size, cols)
        .transpose(0, 2, 1)
        .reshape((rows // block_size) * cols, block_size)
    )


def _from_block_rows(
    blocks: np.ndarray, rows: int, cols: int, block_size: int, axis: int
) -> np.ndarray:
    """Inverse of _to_block_rows for per-element data."""
    if axis == 1:
        return blocks.reshape(rows, cols)
    return (
        blocks.reshape(rows // block_size, cols, block_size)
        .transpose(0, 2, 1)
        .reshape(rows, cols)
    )


def quantize_matrix(
    matrix,
    block_size: int,
    axis: int,
    fmt: str,
    fb: Formatbook | None = None,
    backend: str | None = None,
) -> QuantizedMatrix:
    """Quantize every block-size slice along ``axis`` independently.

    ``fmt`` selects the dialect path (requires ``fb``) or the mx/nv
    baselines.  Non-divisible contraction dimensions are an error; there
    is no padding.
    """
    if fmt not in FORMATS:
        raise InputError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    arr = _validate_matrix_input(matrix)
    rows, cols = arr.shape
    _check_blocking(rows, cols, block_size, axis)
    x = np.ascontiguousarray(_to_block_rows(arr, block_size, axis))

    dialect_grid: np.ndarray | None = None
    try:
        if fmt == "dialect":
            if fb is None:
                raise InputError("dialect format requires a formatbook")
            t = fb.tables
            se, dialect, codes = _kernels.quantize_dialect_batch(
                x, t.values, t.thresholds, t.even_lo, t.even_hi, t.odd_lo, t.odd_hi,
                backend=backend,
            )
            dialect_grid = dialect
        elif fmt == "mx":
            se, codes = _kernels.quantize_mx_batch(x, backend=backend)
        else:
            se, codes = _kernels.quantize_nv_batch(
                x, E4M3_SORTED_VALUES, E4M3_SORTED_BYTES, backend=backend
            )
    except InputError:
        raise
    except ValueError as exc:
        # The numba kernels report exponent-range violations as ValueError.
        raise InputError(str(exc)) from exc

    grid_shape = (
        (rows, cols // block_size) if axis == 1 else (rows // block_size, cols)
    )
    qm = QuantizedMatrix(
        fmt=fmt,
        rows=rows,
        cols=cols,
        block_size=block_size,
        axis=axis,
        scale=se.reshape(grid_shape),
        dialect=dialect_grid.reshape(grid_shape) if dialect_grid is not None else None,
        codes=_from_block_rows(codes, rows, cols, block_size, axis).astype(np.uint8),
    )
    return qm


def _expand_grid(grid: np.ndarray, block_size: int, axis: int) -> np.ndarray:
    return np.repeat(grid, block_size, axis=axis)


def dequantize_matrix(qm: QuantizedMatrix, fb: Formatbook | None = None) -> np.ndarray:
    """Reconstruct the real matrix from a QuantizedMatrix."""
    indices = (qm.codes & 0x7).astype(np.int64)
    signs = (qm.codes >> 3) & 1
    if qm.fmt == "dialect":
        if fb is None:
            raise InputError("dialect format requires a formatbook")
        dia = _expand_grid(qm.dialect.astype(np.int64), qm.block_size, qm.axis)
        half = fb.tables.values[dia, indices].astype(np.float64)
        exps = _expand_grid(qm.scale.astype(np.int32), qm.block_size, qm.axis)
        mags = np.ldexp(half, exps - 1)
    elif qm.fmt == "mx":
        half = np.asarray(FP4_MAGNITUDES_HALF, dtype=np.float64)[indices]
        exps = _expand_grid(qm.scale.astype(np.int32), qm.block_size, qm.axis)
        mags = np.ldexp(half, exps - 1)
    else:
        half = np.asarray(FP4_MAGNITUDES_HALF, dtype=np.float64)[indices]
        decoded = E4M3_DECODE[qm.scale.astype(np.int64)]
        mags = half * 0.5 * _expand_grid(decoded, qm.block_size, qm.axis)
    return np.where(signs == 1, -mags, mags)


def mac_block(a: QuantizedBlock, w: QuantizedBlock, fb: Formatbook) -> BlockPartial:
    """Integer multiply-accumulate of two dialect blocks.

    acc sums (-1)^(sa xor sw) * va * vw over the block, with va/vw the
    half-unit table values; exp_sum is the shared exponent sum.  For
    block sizes up to 64 the accumulator stays within 16 signed bits.
    """
    if len(a) != len(w):
        raise InputError(f"block length mismatch: {len(a)} vs {len(w)}")
    exp_sum = a.scale.value + w.scale.value
    if a.scale.zero_block or w.scale.zero_block:
        return BlockPartial(acc=0, exp_sum=exp_sum)
    va = fb.tables.values[a.dialect][a.indices().astype(np.int64)]
    vw = fb.tables.values[w.dialect][w.indices().astype(np.int64)]
    sign = np.where((a.signs() ^ w.signs()) == 1, -1, 1)
    acc = int(np.sum(sign * va * vw))
    return BlockPartial(acc=acc, exp_sum=exp_sum)


def block_partial_value(p: BlockPartial) -> float:
    """Real value of a block partial: acc * 2^(exp_sum - 2), exactly."""
    return math.ldexp(float(p.acc), p.exp_sum - 2)


def _signed_half_units(qm: QuantizedMatrix, fb: Formatbook | None) -> np.ndarray:
    indices = (qm.codes & 0x7).astype(np.int64)
    if qm.fmt == "dialect":
        dia = _expand_grid(qm.dialect.astype(np.int64), qm.block_size, qm.axis)
        half = fb.tables.values[dia, indices]
    else:
        half = np.asarray(FP4_MAGNITUDES_HALF, dtype=np.int64)[indices]
    signs = (qm.codes >> 3) & 1
    return np.where(signs == 1, -half, half).astype(np.int64)


def gemm(
    a: QuantizedMatrix,
    w: QuantizedMatrix,
    fb: Formatbook | None = None,
    mode: AccumulatorMode | str = AccumulatorMode.EXACT,
    backend: str | None = None,
) -> np.ndarray:
    """Block-quantized matrix product A @ W.

    A must be blocked along its columns and W along its rows with matching
    block sizes and formats.  Exact mode accumulates block partials in
    binary64 with no rounding; fp16 mode rounds every partial to binary16
    and accumulates in binary16.
    """
    mode = AccumulatorMode.parse(mode)
    if a.fmt != w.fmt:
        raise InputError(f"mixed-format gemm rejected: {a.fmt} vs {w.fmt}")
    if a.axis != 1 or w.axis != 0:
        raise InputError("gemm expects A blocked along columns and W along rows")
    if a.cols != w.rows:
        raise InputError(f"dimension mismatch: A is {a.rows}x{a.cols}, W is {w.rows}x{w.cols}")
    if a.block_size != w.block_size:
        raise InputError(
            f"block size mismatch: {a.block_size} vs {w.block_size}"
        )
    if a.fmt == "dialect" and fb is None:
        raise InputError("dialect format requires a formatbook")

    sv_a = _signed_half_units(a, fb)
    sv_w = _signed_half_units(w, fb)
    fp16 = mode is AccumulatorMode.FP16
    if a.fmt == "nv":
        scale_a = E4M3_DECODE[a.scale.astype(np.int64)]
        scale_w = E4M3_DECODE[w.scale.astype(np.int64)]
        return _kernels.gemm_scaled(
            sv_a, scale_a, sv_w, scale_w, a.block_size, fp16, backend=backend
        )
    exp_a = a.scale.astype(np.int32)
    exp_w = w.scale.astype(np.int32)
    return _kernels.gemm_pow2(
        sv_a, exp_a, sv_w, exp_w, a.block_size, fp16, backend=backend
    )


def dequantized_product(
    a: QuantizedMatrix, w: QuantizedMatrix, fb: Formatbook | None = None
) -> np.ndarray:
    """Dequantize both operands and multiply, block partial by block partial.

    Within a block every binary64 intermediate is exact, so this equals the
    mathematical dequantize-then-multiply result while accumulating across
    blocks in the same order as gemm's exact mode.
    """
    da = dequantize_matrix(a, fb)
    dw = dequantize_matrix(w, fb)
    bs = a.block_size
    out = np.zeros((a.rows, w.cols), dtype=np.float64)
    for kb in range(a.cols // bs):
        sl = slice(kb * bs, (kb + 1) * bs)
        out += da[:, sl] @ dw[sl, :]
    return out


def gemm_reference(a, w) -> np.ndarray:
    """Full-precision binary64 matrix product."""
    am = _validate_matrix_input(a)
    wm = _validate_matrix_input(w)
    if am.shape[1] != wm.shape[0]:
        raise InputError(f"dimension mismatch: {am.shape} @ {wm.shape}")
    return am @ wm


def effective_bitwidth(fmt: str, block_size: int, num_dialects: int = 16) -> float:
    """Average stored bits per element, including per-block overhead.

    dialect: 4 + (5 + log2(num_dialects)) / B
    mx:      4 + 5 / B
    nv:      4 + 8 / B
    """
    if block_size < 1:
        raise InputError(f"block size {block_size} must be >= 1")
    if fmt == "dialect":
        return 4.0 + (5.0 + math.log2(num_dialects)) / block_size
    if fmt == "mx":
        return 4.0 + 5.0 / block_size
    if fmt == "nv":
        return 4.0 + 8.0 / block_size
    raise InputError(f"unknown format {fmt!r}")


def fp16_round(x: float) -> float:
    """IEEE binary16 round-to-nearest-even value of x, as a binary64.

    Values beyond the binary16 range round to infinity.
    """
    with np.errstate(over="ignore"):
        return float(np.float64(np.float16(x)))


def relative_frobenius_error(ref, test) -> float:
    """||test - ref||_F / ||ref||_F, with 0/0 defined as 0."""
    r = np.asarray(ref, dtype=np.float64)
    t = np.asarray(test, dtype=np.float64)
    if r.shape != t.shape:
        raise InputError(f"shape mismatch: {r.shape} vs {t.shape}")
    num = float(np.linalg.norm(t - r))
    den = float(np.linalg.norm(r))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den
