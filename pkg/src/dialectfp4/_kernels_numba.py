"""Numba twins of the batch kernels in _kernels.

These are straight loop translations of the numpy implementations; both
backends must produce bit-identical outputs.  Scalar helpers (half_round,
FP4 rounding, E4M3 encoding) use only exact float64 operations so the
translation cannot drift.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

ZERO_SENTINEL = -128

_FP4_BOUNDS = (0.25, 0.75, 1.25, 1.75, 2.5, 3.5, 5.0)


@njit(cache=True)
def half_round(x: float) -> float:
    """Round a float64 to the nearest IEEE binary16 value (ties to even)."""
    if x != x or x == 0.0:
        return x
    sign = 1.0 if x > 0 else -1.0
    a = abs(x)
    if a == np.inf:
        return x
    mant, exp = math.frexp(a)  # a = mant * 2**exp, mant in [0.5, 1)
    if exp < -13:
        # Subnormal half: quantum 2**-24.
        scaled = math.ldexp(a, 24)
        r = _round_even(scaled)
        return sign * math.ldexp(r, -24)
    scaled = math.ldexp(mant, 11)  # in [1024, 2048)
    r = _round_even(scaled)
    value = math.ldexp(r, exp - 11)
    if value > 65504.0:
        return sign * np.inf
    return sign * value


@njit(cache=True)
def _round_even(s: float) -> float:
    f = math.floor(s)
    d = s - f
    if d > 0.5:
        return f + 1.0
    if d < 0.5:
        return f
    if int(f) % 2 == 0:
        return f
    return f + 1.0


@njit(cache=True)
def _shared_exp(amax: float) -> int:
    _, exp = math.frexp(amax)
    return exp - 3


@njit(cache=True)
def _fp4_rne_scalar(v: float) -> int:
    idx = 0
    for i in range(7):
        b = _FP4_BOUNDS[i]
        if v > b:
            idx = i + 1
        elif v == b:
            if i % 2 == 1:
                idx = i + 1
            break
        else:
            break
    return idx


@njit(cache=True)
def quantize_dialect(x, thresholds, even_lo, even_hi, odd_lo, odd_hi):
    nb, blen = x.shape
    se_out = np.empty(nb, dtype=np.int8)
    dialect = np.empty(nb, dtype=np.uint8)
    codes = np.zeros((nb, blen), dtype=np.uint8)
    for b in range(nb):
        amax = 0.0
        for t in range(blen):
            a = abs(x[b, t])
            if a > amax:
                amax = a
        if amax == 0.0:
            se_out[b] = ZERO_SENTINEL
            dialect[b] = 15
            continue
        se = _shared_exp(amax)
        if se < -127 or se > 127:
            raise ValueError("shared exponent outside serializable range")
        se_out[b] = se

        max_mag = 0
        mags = np.empty(blen, dtype=np.int64)
        for t in range(blen):
            mag = int(math.floor(math.ldexp(abs(x[b, t]), 2 - se)))
            if mag > 31:
                mag = 31
            mags[t] = mag
            if mag > max_mag:
                max_mag = mag
        block_max = (max_mag + 1) >> 1
        if block_max > 15:
            block_max = 15
        pair = 15 - block_max

        count_e = 0
        count_o = 0
        for t in range(blen):
            mag = mags[t]
            if even_lo[pair] <= mag < even_hi[pair]:
                count_e += 1
            if odd_lo[pair] <= mag < odd_hi[pair]:
                count_o += 1
        d = 2 * pair if count_e >= count_o else 2 * pair + 1
        dialect[b] = d

        for t in range(blen):
            mag = mags[t]
            idx = 0
            for i in range(7):
                if mag >= thresholds[d, i]:
                    idx = i + 1
                else:
                    break
            sign = 1 if (x[b, t] < 0 and idx > 0) else 0
            codes[b, t] = (sign << 3) | idx
    return se_out, dialect, codes


@njit(cache=True)
def quantize_mx(x):
    nb, blen = x.shape
    se_out = np.empty(nb, dtype=np.int8)
    codes = np.zeros((nb, blen), dtype=np.uint8)
    for b in range(nb):
        amax = 0.0
        for t in range(blen):
            a = abs(x[b, t])
            if a > amax:
                amax = a
        if amax == 0.0:
            se_out[b] = ZERO_SENTINEL
            continue
        se = _shared_exp(amax)
        if se < -127 or se > 127:
            raise ValueError("shared exponent outside serializable range")
        se_out[b] = se
        for t in range(blen):
            idx = _fp4_rne_scalar(math.ldexp(abs(x[b, t]), -se))
            sign = 1 if (x[b, t] < 0 and idx > 0) else 0
            codes[b, t] = (sign << 3) | idx
    return se_out, codes


@njit(cache=True)
def _e4m3_encode(target: float, e4m3_values, e4m3_bytes) -> int:
    last = len(e4m3_values) - 1
    if target >= e4m3_values[last]:
        return e4m3_bytes[last]
    hi = np.searchsorted(e4m3_values, target)
    if hi == 0:
        return 0
    lo = hi - 1
    d_lo = target - e4m3_values[lo]
    d_hi = e4m3_values[hi] - target
    if d_lo < d_hi:
        return e4m3_bytes[lo]
    if d_hi < d_lo:
        return e4m3_bytes[hi]
    if e4m3_bytes[lo] % 2 == 0:
        return e4m3_bytes[lo]
    return e4m3_bytes[hi]


@njit(cache=True)
def quantize_nv(x, e4m3_values, e4m3_bytes):
    nb, blen = x.shape
    scale_bits = np.zeros(nb, dtype=np.uint8)
    codes = np.zeros((nb, blen), dtype=np.uint8)
    for b in range(nb):
        amax = 0.0
        for t in range(blen):
            a = abs(x[b, t])
            if a > amax:
                amax = a
        if amax == 0.0:
            continue
        byte = _e4m3_encode(amax / 6.0, e4m3_values, e4m3_bytes)
        decoded = 0.0
        for i in range(len(e4m3_bytes)):
            if e4m3_bytes[i] == byte:
                decoded = e4m3_values[i]
                break
        if decoded == 0.0:
            continue
        scale_bits[b] = byte
        for t in range(blen):
            idx = _fp4_rne_scalar(abs(x[b, t]) / decoded)
            sign = 1 if (x[b, t] < 0 and idx > 0) else 0
            codes[b, t] = (sign << 3) | idx
    return scale_bits, codes


@njit(cache=True)
def mse_select(x, values, thresholds):
    nb, blen = x.shape
    se_out = np.empty(nb, dtype=np.int8)
    best = np.full(nb, 15, dtype=np.uint8)
    best_mse = np.zeros(nb, dtype=np.float64)
    mags = np.empty(blen, dtype=np.int64)
    for b in range(nb):
        amax = 0.0
        for t in range(blen):
            a = abs(x[b, t])
            if a > amax:
                amax = a
        if amax == 0.0:
            se_out[b] = ZERO_SENTINEL
            continue
        se = _shared_exp(amax)
        if se < -127 or se > 127:
            raise ValueError("shared exponent outside serializable range")
        se_out[b] = se
        for t in range(blen):
            mag = int(math.floor(math.ldexp(abs(x[b, t]), 2 - se)))
            if mag > 31:
                mag = 31
            mags[t] = mag
        running = np.inf
        chosen = 0
        for d in range(16):
            total = 0.0
            for t in range(blen):
                mag = mags[t]
                idx = 0
                for i in range(7):
                    if mag >= thresholds[d, i]:
                        idx = i + 1
                    else:
                        break
                deq = math.ldexp(float(values[d, idx]), se - 1)
                if x[b, t] < 0 and mag > 0:
                    deq = -deq
                e = deq - x[b, t]
                total += e * e
            mse = total / blen
            if mse < running:
                running = mse
                chosen = d
        best[b] = chosen
        best_mse[b] = running
    return se_out, best, best_mse


@njit(cache=True)
def gemm_pow2(sv_a, exp_a, sv_w, exp_w, block_size, fp16):
    m, k = sv_a.shape
    n = sv_w.shape[1]
    nkb = k // block_size
    sv_wt = np.ascontiguousarray(sv_w.T)  # contiguous reads in the hot loop
    # Exponent sums span [-258, 252]; multiplying the integer accumulator by
    # a tabulated power of two is exact, identical to ldexp.
    pow2 = np.empty(512, dtype=np.float64)
    for e in range(512):
        pow2[e] = math.ldexp(1.0, e - 258)
    out = np.empty((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            s = 0.0
            for kb in range(nkb):
                base = kb * block_size
                acc = 0
                for t in range(block_size):
                    acc += sv_a[i, base + t] * sv_wt[j, base + t]
                part = acc * pow2[exp_a[i, kb] + exp_w[kb, j] + 256]
                if fp16:
                    s = half_round(s + half_round(part))
                else:
                    s += part
            out[i, j] = s
    return out


@njit(cache=True)
def gemm_scaled(sv_a, scale_a, sv_w, scale_w, block_size, fp16):
    m, k = sv_a.shape
    n = sv_w.shape[1]
    nkb = k // block_size
    sv_wt = np.ascontiguousarray(sv_w.T)
    out = np.empty((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            s = 0.0
            for kb in range(nkb):
                base = kb * block_size
                acc = 0
                for t in range(block_size):
                    acc += sv_a[i, base + t] * sv_wt[j, base + t]
                part = math.ldexp(float(acc), -2)
                part = part * scale_a[i, kb]
                part = part * scale_w[kb, j]
                if fp16:
                    s = half_round(s + half_round(part))
                else:
                    s += part
            out[i, j] = s
    return out
