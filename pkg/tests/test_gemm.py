"""Integer MAC emulation, blocked GEMM, bitwidth accounting, fp16 rounding."""

import math

import numpy as np
import pytest

from dialectfp4 import (
    AccumulatorMode,
    BlockPartial,
    InputError,
    QuantizedBlock,
    SharedExponent,
    block_partial_value,
    dequantize_block,
    dequantized_product,
    dequantize_matrix,
    effective_bitwidth,
    fp16_round,
    gemm,
    gemm_reference,
    mac_block,
    quantize_block,
    quantize_block_mx,
    quantize_block_nv,
    quantize_matrix,
    relative_frobenius_error,
)

# ---------------------------------------------------------------------------
# Brute-force binary16 oracle
# ---------------------------------------------------------------------------


def _half_decode(bits: int) -> float:
    sign = -1.0 if bits >> 15 else 1.0
    exp = (bits >> 10) & 0x1F
    mant = bits & 0x3FF
    if exp == 0:
        return sign * mant * 2.0**-24
    if exp == 31:
        return sign * math.inf if mant == 0 else math.nan
    return sign * (1024 + mant) * 2.0 ** (exp - 25)


_HALF_FINITE = sorted(
    (_half_decode(b), b) for b in range(0x8000) if math.isfinite(_half_decode(b))
)
_HALF_VALUES = [v for v, _ in _HALF_FINITE]
_HALF_BITS = [b for _, b in _HALF_FINITE]


def fp16_oracle(x: float) -> float:
    if math.isnan(x):
        return math.nan
    sign = -1.0 if math.copysign(1.0, x) < 0 else 1.0
    a = abs(x)
    if a >= 65520.0:  # midpoint to the next power of two rounds up to inf
        return sign * math.inf
    import bisect

    hi = bisect.bisect_left(_HALF_VALUES, a)
    if hi == len(_HALF_VALUES):
        return sign * _HALF_VALUES[-1]
    if _HALF_VALUES[hi] == a:
        return sign * a
    lo = hi - 1
    d_lo, d_hi = a - _HALF_VALUES[lo], _HALF_VALUES[hi] - a
    if d_lo < d_hi:
        return sign * _HALF_VALUES[lo]
    if d_hi < d_lo:
        return sign * _HALF_VALUES[hi]
    pick = lo if _HALF_BITS[lo] & 1 == 0 else hi
    return sign * _HALF_VALUES[pick]


class TestFp16Round:
    def test_identity_on_all_half_values(self):
        for v in _HALF_VALUES[:: 7]:
            assert fp16_round(v) == v

    def test_spec_midpoint(self):
        assert fp16_round(2049.0) == 2048.0  # ties to even significand

    def test_zero_and_one(self):
        assert fp16_round(0.0) == 0.0
        assert fp16_round(1.0) == 1.0

    def test_midpoints_tie_to_even(self):
        for (v1, _), (v2, _) in zip(_HALF_FINITE[1:800:17], _HALF_FINITE[2:801:17]):
            mid = (v1 + v2) / 2.0
            assert fp16_round(mid) == fp16_oracle(mid), mid

    def test_random_against_oracle(self):
        rng = np.random.default_rng(31)
        for _ in range(3000):
            x = float(rng.normal() * 10.0 ** rng.integers(-8, 6))
            assert fp16_round(x) == fp16_oracle(x), x

    def test_overflow_to_infinity(self):
        assert fp16_round(65519.9) == 65504.0
        assert math.isinf(fp16_round(65520.0))
        assert math.isinf(fp16_round(-1e9))

    def test_numba_half_round_matches(self):
        from dialectfp4._kernels_numba import half_round

        rng = np.random.default_rng(37)
        samples = [v for v, _ in _HALF_FINITE[::13]]
        samples += [(v1 + v2) / 2 for (v1, _), (v2, _) in
                    zip(_HALF_FINITE[:2000:11], _HALF_FINITE[1:2001:11])]
        samples += list(rng.normal(size=2000) * 10.0 ** rng.integers(-8, 6, size=2000))
        samples += [0.0, 2049.0, 65519.9, 65520.0, 1e9, 2.0**-25, 2.0**-24]
        for v in samples:
            got = half_round(float(v))
            want = fp16_oracle(float(v))
            assert got == want or (math.isinf(got) and math.isinf(want)), v


# ---------------------------------------------------------------------------
# mac_block / block_partial_value
# ---------------------------------------------------------------------------


def _block(dialect, codes, se=0, zero=False):
    return QuantizedBlock(
        scale=SharedExponent(value=se, zero_block=zero),
        dialect=dialect,
        codes=np.asarray(codes, dtype=np.uint8),
    )


class TestMacBlock:
    def test_single_element_square_of_max(self, fb):
        b = _block(0, [0b0111])  # +15 half-units (7.5)
        p = mac_block(b, b, fb)
        assert p.acc == 225 and p.exp_sum == 0
        assert block_partial_value(p) == 56.25

    def test_opposite_signs(self, fb):
        a = _block(4, [0b0110])  # +10 half-units (5.0)
        w = _block(4, [0b1101])  # -6 half-units (-3.0)
        p = mac_block(a, w, fb)
        assert p.acc == -60
        assert block_partial_value(p) == -15.0
        deq = dequantize_block(a, fb) @ dequantize_block(w, fb)
        assert block_partial_value(p) == deq

    def test_zero_block_contributes_nothing(self, fb):
        a = _block(4, [0b0110, 0b0011])
        z = _block(15, [0, 0], zero=True)
        assert mac_block(a, z, fb).acc == 0

    def test_length_mismatch(self, fb):
        with pytest.raises(InputError):
            mac_block(_block(0, [1]), _block(0, [1, 2]), fb)

    def test_partial_value_is_exponent_adjustment(self):
        assert block_partial_value(BlockPartial(acc=7, exp_sum=0)) == 1.75
        assert block_partial_value(BlockPartial(acc=0, exp_sum=5)) == 0.0
        assert block_partial_value(BlockPartial(acc=225, exp_sum=0)) == 56.25

    def test_matches_dequantized_dot_on_random_blocks(self, fb):
        rng = np.random.default_rng(41)
        for _ in range(300):
            xa = rng.normal(size=32) * 2.0 ** rng.integers(-5, 6)
            xw = rng.standard_t(3, size=32)
            a, w = quantize_block(xa, fb), quantize_block(xw, fb)
            p = mac_block(a, w, fb)
            dot = float(np.dot(dequantize_block(a, fb), dequantize_block(w, fb)))
            assert block_partial_value(p) == dot

    def test_accumulator_bound(self, fb):
        rng = np.random.default_rng(43)
        for _ in range(100):
            a = quantize_block(rng.normal(size=64) * 4, fb)
            w = quantize_block(rng.normal(size=64) * 4, fb)
            p = mac_block(a, w, fb)
            assert abs(p.acc) <= 64 * 225 < 2**15

    def test_sign_negation(self, fb):
        rng = np.random.default_rng(47)
        xa, xw = rng.normal(size=16), rng.normal(size=16)
        a, w = quantize_block(xa, fb), quantize_block(xw, fb)
        flipped = _block(
            a.dialect,
            np.where(a.indices() > 0, a.codes ^ 0b1000, a.codes),
            se=a.scale.value,
        )
        assert mac_block(flipped, w, fb).acc == -mac_block(a, w, fb).acc


# ---------------------------------------------------------------------------
# quantize_matrix
# ---------------------------------------------------------------------------


class TestQuantizeMatrix:
    def test_block_count(self, fb):
        m = np.arange(4 * 64, dtype=np.float64).reshape(4, 64) + 1
        qm = quantize_matrix(m, 32, 1, "dialect", fb)
        assert qm.num_blocks == 8 and qm.grid_shape == (4, 2)

    def test_indivisible_rejected(self, fb):
        with pytest.raises(InputError):
            quantize_matrix(np.ones((4, 64)), 48, 1, "dialect", fb)

    def test_block_size_bounds(self, fb):
        with pytest.raises(InputError):
            quantize_matrix(np.ones((4, 130)), 65, 1, "dialect", fb)

    def test_nonfinite_rejected(self, fb):
        m = np.ones((2, 32))
        m[0, 0] = np.nan
        with pytest.raises(InputError):
            quantize_matrix(m, 32, 1, "dialect", fb)

    @pytest.mark.parametrize("backend", ["numpy", "numba"])
    def test_exponent_out_of_range_rejected(self, fb, backend):
        m = np.full((1, 32), 1e40)
        with pytest.raises(InputError):
            quantize_matrix(m, 32, 1, "dialect", fb, backend=backend)

    def test_mx_reproduces_per_block_quantizer(self, fb):
        rng = np.random.default_rng(53)
        m = rng.normal(size=(4, 64))
        qm = quantize_matrix(m, 32, 1, "mx", fb)
        for r in range(4):
            for kb in range(2):
                mb = quantize_block_mx(m[r, kb * 32 : (kb + 1) * 32])
                assert qm.scale[r, kb] == mb.scale.value
                np.testing.assert_array_equal(
                    qm.codes[r, kb * 32 : (kb + 1) * 32], mb.codes
                )

    def test_dialect_reproduces_per_block_quantizer(self, fb):
        rng = np.random.default_rng(59)
        m = rng.standard_t(3, size=(3, 96))
        qm = quantize_matrix(m, 32, 1, "dialect", fb)
        for r in range(3):
            for kb in range(3):
                qb = quantize_block(m[r, kb * 32 : (kb + 1) * 32], fb)
                assert qm.dialect[r, kb] == qb.dialect
                assert qm.scale[r, kb] == qb.scale.value
                np.testing.assert_array_equal(
                    qm.codes[r, kb * 32 : (kb + 1) * 32], qb.codes
                )

    def test_nv_reproduces_per_block_quantizer(self, fb):
        rng = np.random.default_rng(61)
        m = rng.normal(size=(2, 32))
        qm = quantize_matrix(m, 16, 1, "nv", fb)
        for r in range(2):
            for kb in range(2):
                nb = quantize_block_nv(m[r, kb * 16 : (kb + 1) * 16])
                assert qm.scale[r, kb] == nb.scale_bits

    def test_axis0_blocks_run_down_columns(self, fb):
        rng = np.random.default_rng(67)
        m = rng.normal(size=(64, 3))
        qm = quantize_matrix(m, 32, 0, "dialect", fb)
        assert qm.grid_shape == (2, 3)
        for kb in range(2):
            for c in range(3):
                qb = quantize_block(m[kb * 32 : (kb + 1) * 32, c], fb)
                assert qm.dialect[kb, c] == qb.dialect
                np.testing.assert_array_equal(
                    qm.codes[kb * 32 : (kb + 1) * 32, c], qb.codes
                )

    def test_dequantize_matrix_matches_blocks(self, fb):
        rng = np.random.default_rng(71)
        m = rng.normal(size=(4, 64))
        for fmt in ("dialect", "mx", "nv"):
            qm = quantize_matrix(m, 32, 1, fmt, fb)
            deq = dequantize_matrix(qm, fb)
            assert deq.shape == m.shape
            assert np.all(np.isfinite(deq))

    def test_zero_rows_round_trip(self, fb):
        m = np.zeros((2, 32))
        qm = quantize_matrix(m, 32, 1, "dialect", fb)
        assert np.all(qm.scale == -128)
        np.testing.assert_array_equal(dequantize_matrix(qm, fb), m)


# ---------------------------------------------------------------------------
# gemm
# ---------------------------------------------------------------------------


class TestGemm:
    def test_single_block_bit_identical_to_reference(self, fb):
        rng = np.random.default_rng(73)
        a = rng.normal(size=(8, 32))
        w = rng.normal(size=(32, 8))
        aq = quantize_matrix(a, 32, 1, "dialect", fb)
        wq = quantize_matrix(w, 32, 0, "dialect", fb)
        out = gemm(aq, wq, fb)
        ref = gemm_reference(dequantize_matrix(aq, fb), dequantize_matrix(wq, fb))
        np.testing.assert_array_equal(out, ref)

    def test_multi_block_bit_identical_to_dequantized_product(self, fb):
        rng = np.random.default_rng(79)
        for fmt in ("dialect", "mx"):
            a = rng.standard_t(3, size=(8, 128)) * 2
            w = rng.normal(size=(128, 8))
            aq = quantize_matrix(a, 32, 1, fmt, fb)
            wq = quantize_matrix(w, 32, 0, fmt, fb)
            np.testing.assert_array_equal(
                gemm(aq, wq, fb), dequantized_product(aq, wq, fb)
            )

    def test_sparse_exactness(self, fb):
        # A row of dialect-exact values times a one-hot column is exact.
        a = np.tile(np.array(fb.dialects[4].values, dtype=np.float64) * 0.5, (1, 4))
        w = np.zeros((32, 1))
        w[5, 0] = 6.5
        aq = quantize_matrix(a, 32, 1, "dialect", fb)
        wq = quantize_matrix(w, 32, 0, "dialect", fb)
        np.testing.assert_array_equal(gemm(aq, wq, fb), gemm_reference(a, w))

    def test_nv_close_to_dequantized_product(self, fb):
        rng = np.random.default_rng(83)
        a = rng.normal(size=(4, 64))
        w = rng.normal(size=(64, 4))
        aq = quantize_matrix(a, 16, 1, "nv", fb)
        wq = quantize_matrix(w, 16, 0, "nv", fb)
        out = gemm(aq, wq, fb)
        ref = dequantized_product(aq, wq, fb)
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_fp16_mode_error_bounded(self, fb):
        rng = np.random.default_rng(89)
        a = rng.normal(size=(4, 512)) * 4
        w = rng.normal(size=(512, 4)) * 4
        aq = quantize_matrix(a, 32, 1, "dialect", fb)
        wq = quantize_matrix(w, 32, 0, "dialect", fb)
        exact = gemm(aq, wq, fb, AccumulatorMode.EXACT)
        fp16 = gemm(aq, wq, fb, AccumulatorMode.FP16)
        # Per partial: one rounding of the partial plus one of the running
        # sum, each within 2^-11 relative of magnitudes bounded by the sum
        # of absolute partials.
        abs_bound = np.zeros_like(exact)
        da, dw = dequantize_matrix(aq, fb), dequantize_matrix(wq, fb)
        for kb in range(512 // 32):
            sl = slice(kb * 32, (kb + 1) * 32)
            abs_bound += np.abs(da[:, sl] @ dw[sl, :])
        tol = 2.0**-11 * (2 * (512 // 32) + 2) * abs_bound + 1e-12
        assert np.all(np.abs(fp16 - exact) <= tol)

    def test_fp16_mode_differs_somewhere(self, fb):
        rng = np.random.default_rng(97)
        a = rng.normal(size=(4, 2048)) * 11
        w = rng.normal(size=(2048, 4)) * 9
        aq = quantize_matrix(a, 32, 1, "dialect", fb)
        wq = quantize_matrix(w, 32, 0, "dialect", fb)
        assert np.any(
            gemm(aq, wq, fb, "fp16") != gemm(aq, wq, fb, "exact")
        )

    def test_mixed_format_rejected(self, fb):
        a = quantize_matrix(np.ones((2, 32)), 32, 1, "dialect", fb)
        w = quantize_matrix(np.ones((32, 2)), 32, 0, "mx", fb)
        with pytest.raises(InputError):
            gemm(a, w, fb)

    def test_wrong_axes_rejected(self, fb):
        a = quantize_matrix(np.ones((32, 2)), 32, 0, "dialect", fb)
        w = quantize_matrix(np.ones((32, 2)), 32, 0, "dialect", fb)
        with pytest.raises(InputError):
            gemm(a, w, fb)

    def test_dimension_mismatch_rejected(self, fb):
        a = quantize_matrix(np.ones((2, 32)), 32, 1, "dialect", fb)
        w = quantize_matrix(np.ones((64, 2)), 32, 0, "dialect", fb)
        with pytest.raises(InputError):
            gemm(a, w, fb)

    def test_block_size_mismatch_rejected(self, fb):
        a = quantize_matrix(np.ones((2, 64)), 32, 1, "dialect", fb)
        w = quantize_matrix(np.ones((64, 2)), 16, 0, "dialect", fb)
        with pytest.raises(InputError):
            gemm(a, w, fb)

    def test_unknown_mode_rejected(self, fb):
        a = quantize_matrix(np.ones((2, 32)), 32, 1, "dialect", fb)
        w = quantize_matrix(np.ones((32, 2)), 32, 0, "dialect", fb)
        with pytest.raises(InputError):
            gemm(a, w, fb, "double")


class TestGemmReference:
    def test_identity(self):
        m = np.arange(9, dtype=np.float64).reshape(3, 3)
        np.testing.assert_array_equal(gemm_reference(np.eye(3), m), m)

    def test_zeros(self):
        assert not gemm_reference(np.zeros((2, 3)), np.ones((3, 2))).any()

    def test_one_by_one(self):
        assert gemm_reference([[3.0]], [[4.0]])[0, 0] == 12.0

    def test_mismatch(self):
        with pytest.raises(InputError):
            gemm_reference(np.ones((2, 3)), np.ones((2, 3)))


class TestEffectiveBitwidth:
    @pytest.mark.parametrize(
        "fmt,block,exact,printed",
        [
            ("dialect", 16, 4.5625, 4.56),
            ("dialect", 32, 4.28125, 4.28),
            ("dialect", 64, 4.140625, 4.14),
            ("mx", 16, 4.3125, 4.31),
            ("mx", 32, 4.15625, 4.16),
            ("nv", 16, 4.5, 4.5),
            ("nv", 32, 4.25, 4.25),
        ],
    )
    def test_reported_values(self, fmt, block, exact, printed):
        got = effective_bitwidth(fmt, block)
        assert got == exact
        assert abs(got - printed) < 0.005

    def test_strictly_decreasing_in_block_size(self):
        for fmt in ("dialect", "mx", "nv"):
            bits = [effective_bitwidth(fmt, b) for b in (1, 2, 4, 8, 16, 32, 64)]
            assert all(x > y for x, y in zip(bits, bits[1:]))

    def test_dialect_count_term(self):
        assert effective_bitwidth("dialect", 32, num_dialects=8) == 4 + 8 / 32

    def test_bad_inputs(self):
        with pytest.raises(InputError):
            effective_bitwidth("dialect", 0)
        with pytest.raises(InputError):
            effective_bitwidth("int8", 32)


class TestRelativeFrobeniusError:
    def test_identical(self):
        assert relative_frobenius_error(np.ones((2, 2)), np.ones((2, 2))) == 0.0

    def test_doubled(self):
        m = np.full((3, 3), 2.0)
        assert relative_frobenius_error(m, 2 * m) == 1.0

    def test_zero_over_zero(self):
        assert relative_frobenius_error(np.zeros(4), np.zeros(4)) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            relative_frobenius_error(np.zeros(3), np.zeros(4))
