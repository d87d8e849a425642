"""Batch kernels with a numba fast path and a pure-numpy fallback.

Every kernel exists twice: a vectorized numpy implementation here and an
@njit twin in _kernels_numba.  Both compute bit-identical results; the
parity suite enforces it.  The active backend is chosen once at import
from the DIALECTFP4_BACKEND environment variable:

    auto   (default) use numba when importable, else numpy
    numba  require numba, fail loudly if missing
    numpy  force the fallback

Callers may also pass backend="numpy"/"numba" per call (tests, benchmarks).

Kernels assume finite float64 input; callers validate.  Blocks are rows of
a (num_blocks, block_len) array.  Shared exponents are int8 with -128
marking an all-zero block.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import InputError

ZERO_SENTINEL = -128

_VALID_BACKENDS = ("auto", "numba", "numpy")


def _resolve_backend() -> str:
    requested = os.environ.get("DIALECTFP4_BACKEND", "auto").strip().lower()
    if requested not in _VALID_BACKENDS:
        raise InputError(
            f"DIALECTFP4_BACKEND={requested!r}; expected one of {_VALID_BACKENDS}"
        )
    if requested == "numpy":
        return "numpy"
    try:
        from . import _kernels_numba  # noqa: F401
    except ImportError:
        if requested == "numba":
            raise
        return "numpy"
    return "numba"


_ACTIVE = _resolve_backend()


def active_backend() -> str:
    """Backend selected at import time ('numba' or 'numpy')."""
    return _ACTIVE


def _impl(backend: str | None):
    choice = _ACTIVE if backend is None else backend
    if choice == "numpy":
        return None
    if choice == "numba":
        from . import _kernels_numba

        return _kernels_numba
    raise InputError(f"unknown backend {choice!r}")


def _shared_exponents(absx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row shared exponent (int64) and the nonzero-row mask."""
    amax = absx.max(axis=1)
    nonzero = amax > 0.0
    se = np.zeros(absx.shape[0], dtype=np.int64)
    if nonzero.any():
        _, exps = np.frexp(amax[nonzero])
        se[nonzero] = exps.astype(np.int64) - 3
    if np.any(nonzero & ((se < -127) | (se > 127))):
        raise InputError("shared exponent outside serializable range")
    return se, nonzero


def _se_to_int8(se: np.ndarray, nonzero: np.ndarray) -> np.ndarray:
    out = np.full(se.shape, ZERO_SENTINEL, dtype=np.int8)
    out[nonzero] = se[nonzero].astype(np.int8)
    return out


def _quarter_codes(
    x: np.ndarray, absx: np.ndarray, se: np.ndarray, nonzero: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    mags = np.zeros(x.shape, dtype=np.int64)
    if nonzero.any():
        scaled = np.ldexp(absx[nonzero], (2 - se[nonzero, None]).astype(np.int32))
        mags[nonzero] = np.minimum(np.floor(scaled), 31).astype(np.int64)
    signs = ((x < 0) & (mags > 0)).astype(np.uint8)
    return mags, signs


def quantize_dialect_batch(
    x: np.ndarray,
    values: np.ndarray,
    thresholds: np.ndarray,
    even_lo: np.ndarray,
    even_hi: np.ndarray,
    odd_lo: np.ndarray,
    odd_hi: np.ndarray,
    backend: str | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two-stage quantization of every row: (se int8, dialect u8, codes u8)."""
    mod = _impl(backend)
    if mod is not None:
        return mod.quantize_dialect(x, thresholds, even_lo, even_hi, odd_lo, odd_hi)

    absx = np.abs(x)
    se, nonzero = _shared_exponents(absx)
    mags, signs = _quarter_codes(x, absx, se, nonzero)

    max_mag = mags.max(axis=1)
    block_max = np.minimum((max_mag + 1) >> 1, 15)
    pair = 15 - block_max
    pair[~nonzero] = 7

    count_e = np.count_nonzero(
        (mags >= even_lo[pair][:, None]) & (mags < even_hi[pair][:, None]), axis=1
    )
    count_o = np.count_nonzero(
        (mags >= odd_lo[pair][:, None]) & (mags < odd_hi[pair][:, None]), axis=1
    )
    dialect = np.where(count_e >= count_o, 2 * pair, 2 * pair + 1).astype(np.uint8)
    dialect[~nonzero] = 15

    row_thresholds = thresholds[dialect.astype(np.int64)]
    indices = (mags[:, :, None] >= row_thresholds[:, None, :]).sum(axis=2)
    codes = ((signs.astype(np.uint8) << 3) | indices.astype(np.uint8)).astype(np.uint8)
    return _se_to_int8(se, nonzero), dialect, codes


# FP4 E2M1 round-to-nearest-even boundaries; ties at an odd boundary index
# round up, ties at an even index round down (toward the even mantissa).
FP4_BOUNDS = np.array([0.25, 0.75, 1.25, 1.75, 2.5, 3.5, 5.0])
_FP4_ODD_BOUND = np.array([False, True, False, True, False, True, False])


def _fp4_rne(scaled: np.ndarray) -> np.ndarray:
    above = (scaled[..., None] > FP4_BOUNDS).sum(axis=-1)
    tie_up = ((scaled[..., None] == FP4_BOUNDS) & _FP4_ODD_BOUND).any(axis=-1)
    return above + tie_up


def quantize_mx_batch(
    x: np.ndarray, backend: str | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """MXFP4 quantization of every row: (se int8, codes u8)."""
    mod = _impl(backend)
    if mod is not None:
        return mod.quantize_mx(x)

    absx = np.abs(x)
    se, nonzero = _shared_exponents(absx)
    indices = np.zeros(x.shape, dtype=np.int64)
    if nonzero.any():
        scaled = np.ldexp(absx[nonzero], (-se[nonzero, None]).astype(np.int32))
        indices[nonzero] = _fp4_rne(scaled)
    signs = ((x < 0) & (indices > 0)).astype(np.uint8)
    codes = ((signs << 3) | indices.astype(np.uint8)).astype(np.uint8)
    return _se_to_int8(se, nonzero), codes


def quantize_nv_batch(
    x: np.ndarray,
    e4m3_values: np.ndarray,
    e4m3_bytes: np.ndarray,
    backend: str | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """NVFP4 quantization of every row: (scale bytes u8, codes u8).

    e4m3_values/e4m3_bytes list the non-negative finite E4M3 values in
    ascending order with their encodings.
    """
    mod = _impl(backend)
    if mod is not None:
        return mod.quantize_nv(x, e4m3_values, e4m3_bytes)

    absx = np.abs(x)
    amax = absx.max(axis=1)
    target = amax / 6.0

    nb = x.shape[0]
    scale_bits = np.zeros(nb, dtype=np.uint8)
    top = e4m3_values[-1]
    saturated = target >= top
    scale_bits[saturated] = e4m3_bytes[-1]
    todo = ~saturated & (target > 0.0)
    if todo.any():
        t = target[todo]
        hi = np.searchsorted(e4m3_values, t)
        lo = np.maximum(hi - 1, 0)
        d_lo = t - e4m3_values[lo]
        d_hi = e4m3_values[hi] - t
        pick_lo = (d_lo < d_hi) | ((d_lo == d_hi) & (e4m3_bytes[lo] % 2 == 0))
        chosen = np.where(pick_lo, e4m3_bytes[lo], e4m3_bytes[hi])
        chosen[hi == 0] = 0
        scale_bits[todo] = chosen

    value_of = np.zeros(256, dtype=np.float64)
    value_of[e4m3_bytes.astype(np.int64)] = e4m3_values
    decoded = value_of[scale_bits.astype(np.int64)]

    indices = np.zeros(x.shape, dtype=np.int64)
    live = decoded > 0.0
    if live.any():
        scaled = absx[live] / decoded[live, None]
        indices[live] = _fp4_rne(scaled)
    scale_bits[~live] = 0
    signs = ((x < 0) & (indices > 0)).astype(np.uint8)
    codes = ((signs << 3) | indices.astype(np.uint8)).astype(np.uint8)
    return scale_bits, codes


def mse_select_batch(
    x: np.ndarray,
    values: np.ndarray,
    thresholds: np.ndarray,
    backend: str | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """MSE-oracle dialect per row: (se int8, dialect u8, mse f8).

    Zero blocks report dialect 15 and mse 0.
    """
    mod = _impl(backend)
    if mod is not None:
        return mod.mse_select(x, values, thresholds)

    nb, blen = x.shape
    absx = np.abs(x)
    se, nonzero = _shared_exponents(absx)
    mags, sign_bits = _quarter_codes(x, absx, se, nonzero)
    sign_factor = np.where(sign_bits == 1, -1.0, 1.0)
    scale = np.ldexp(np.ones(nb), (se - 1).astype(np.int32))

    best = np.full(nb, 15, dtype=np.uint8)
    best_mse = np.zeros(nb, dtype=np.float64)
    if nonzero.any():
        running = np.full(nb, np.inf)
        chosen = np.zeros(nb, dtype=np.uint8)
        flat = mags.reshape(-1)
        for dialect in range(16):
            indices = np.searchsorted(thresholds[dialect], flat, side="right")
            half_units = values[dialect][indices].reshape(nb, blen).astype(np.float64)
            deq = sign_factor * half_units * scale[:, None]
            err = deq - x
            total = np.zeros(nb)
            for col in range(blen):
                e = err[:, col]
                total += e * e
            mse = total / blen
            better = mse < running
            running[better] = mse[better]
            chosen[better] = dialect
        best[nonzero] = chosen[nonzero]
        best_mse[nonzero] = running[nonzero]
    return _se_to_int8(se, nonzero), best, best_mse


def _fp16_round_array(a: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return a.astype(np.float16).astype(np.float64)


def gemm_pow2(
    sv_a: np.ndarray,
    exp_a: np.ndarray,
    sv_w: np.ndarray,
    exp_w: np.ndarray,
    block_size: int,
    fp16: bool,
    backend: str | None = None,
) -> np.ndarray:
    """Blocked integer GEMM with power-of-two block scales.

    sv_* hold signed half-unit integers; exp_* hold per-block shared
    exponents (int32 grids, zero blocks already contribute zero products).
    Each block partial is acc * 2^(ea+ew-2), exactly; fp16 mode rounds the
    partial to binary16 and accumulates in binary16.
    """
    mod = _impl(backend)
    if mod is not None:
        return mod.gemm_pow2(sv_a, exp_a, sv_w, exp_w, block_size, fp16)

    m, k = sv_a.shape
    n = sv_w.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    for kb in range(k // block_size):
        sl = slice(kb * block_size, (kb + 1) * block_size)
        acc = sv_a[:, sl] @ sv_w[sl, :]
        ex = (exp_a[:, kb : kb + 1] + exp_w[kb : kb + 1, :] - 2).astype(np.int32)
        part = np.ldexp(acc.astype(np.float64), ex)
        if fp16:
            out = _fp16_round_array(out + _fp16_round_array(part))
        else:
            out += part
    return out


def gemm_scaled(
    sv_a: np.ndarray,
    scale_a: np.ndarray,
    sv_w: np.ndarray,
    scale_w: np.ndarray,
    block_size: int,
    fp16: bool,
    backend: str | None = None,
) -> np.ndarray:
    """Blocked integer GEMM with real-valued block scales (NVFP4 path).

    Each block partial is (acc * 2^-2) * sa * sw evaluated left to right.
    """
    mod = _impl(backend)
    if mod is not None:
        return mod.gemm_scaled(sv_a, scale_a, sv_w, scale_w, block_size, fp16)

    m, k = sv_a.shape
    n = sv_w.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    for kb in range(k // block_size):
        sl = slice(kb * block_size, (kb + 1) * block_size)
        acc = sv_a[:, sl] @ sv_w[sl, :]
        part = np.ldexp(acc.astype(np.float64), -2)
        part = part * scale_a[:, kb : kb + 1]
        part = part * scale_w[kb : kb + 1, :]
        if fp16:
            out = _fp16_round_array(out + _fp16_round_array(part))
        else:
            out += part
    return out
