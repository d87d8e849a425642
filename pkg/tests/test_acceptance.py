"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run with -s to see them).  Random
inputs come from the package's seeded SplitMix64 generator so runs are
reproducible bit for bit.
"""

import time

import numpy as np
import pytest

import dialectfp4 as d
from conftest import nearest_index_bruteforce
from dialectfp4 import _kernels
from dialectfp4.fileio import quantized_to_bytes
from dialectfp4.kvcache import StreamingKeyCache, StreamingValueCache, materialize
from dialectfp4.rng import SplitMix64, gaussian_matrix, student_t_matrix

BLOCK = 32


class _Report:
    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.start = time.perf_counter()

    def finish(self, ok, detail=""):
        elapsed = time.perf_counter() - self.start
        status = "PASS" if ok else "FAIL"
        suffix = f" [{detail}]" if detail else ""
        print(f"{status} criterion {self.number}: {self.title}{suffix} ({elapsed:.2f}s)")
        return ok


def _suite_blocks(seed, count, dist):
    g = SplitMix64(seed)
    if dist == "gaussian":
        return g.gaussian(count * BLOCK).reshape(count, BLOCK)
    return g.student_t(count * BLOCK).reshape(count, BLOCK)


def _ordered_block_mse(deq, x):
    err = deq - x
    total = np.zeros(x.shape[0])
    for col in range(x.shape[1]):
        e = err[:, col]
        total += e * e
    return total / x.shape[1]


def test_criterion_1_worked_example(fb):
    rep = _Report(1, "quarter code 17 under dialect 4 -> index 6 -> 5.0; interval [16, 23)")
    idx = d.quantize_element(17, fb.dialects[4])
    qb = d.QuantizedBlock(
        scale=d.SharedExponent(0), dialect=4, codes=np.array([idx], np.uint8)
    )
    deq = d.dequantize_block(qb, fb)[0]
    interval = [q for q in range(32) if d.quantize_element(q, fb.dialects[4]) == 6]
    ok = idx == 6 and deq == 5.0 and interval == list(range(16, 23))
    assert rep.finish(ok, f"index={idx} deq={deq}")


def test_criterion_2_beneficial_ranges(fb):
    rep = _Report(2, "pair 2 beneficial ranges are [18, 23) and [14, 18)")
    even, odd = d.beneficial_ranges(fb, 2)
    ok = (even.lo, even.hi, odd.lo, odd.hi) == (18, 23, 14, 18)
    assert rep.finish(ok, f"even=[{even.lo},{even.hi}) odd=[{odd.lo},{odd.hi})")


def test_criterion_3_effective_bitwidth():
    rep = _Report(3, "effective bitwidths match reported two-decimal values")
    cases = [
        ("dialect", 16, 4.5625, 4.56),
        ("dialect", 32, 4.28125, 4.28),
        ("dialect", 64, 4.140625, 4.14),
        ("mx", 16, 4.3125, 4.31),
        ("mx", 32, 4.15625, 4.16),
        ("nv", 16, 4.5, 4.5),
        ("nv", 32, 4.25, 4.25),
    ]
    ok = True
    for fmt, block, exact, printed in cases:
        got = d.effective_bitwidth(fmt, block)
        ok &= got == exact and abs(got - printed) < 0.005
    assert rep.finish(ok)


def test_criterion_4_integer_path_equivalence(fb):
    rep = _Report(4, "mac path equals dequantized binary64 dot on 10,000 block pairs")
    failures = 0
    for dist, seed in (("gaussian", 41_000), ("student_t3", 42_000)):
        xa = _suite_blocks(seed, 5000, dist)
        xw = _suite_blocks(seed + 1, 5000, dist)
        for i in range(5000):
            a = d.quantize_block(xa[i], fb)
            w = d.quantize_block(xw[i], fb)
            value = d.block_partial_value(d.mac_block(a, w, fb))
            dot = float(np.dot(d.dequantize_block(a, fb), d.dequantize_block(w, fb)))
            failures += value != dot
    assert rep.finish(failures == 0, f"{failures} mismatches")


def test_criterion_5_oracle_regret(fb):
    rep = _Report(5, "two-stage mean MSE <= 1.25x oracle; oracle never loses per block")
    t = fb.tables
    ok = True
    detail = []
    for dist, seed in (("gaussian", 51_000), ("student_t3", 52_000)):
        x = _suite_blocks(seed, 10_000, dist)
        _, _, oracle_mse = _kernels.mse_select_batch(x, t.values, t.thresholds)
        qm = d.quantize_matrix(x, BLOCK, 1, "dialect", fb)
        two_stage_mse = _ordered_block_mse(d.dequantize_matrix(qm, fb), x)
        ratio = float(two_stage_mse.mean() / oracle_mse.mean())
        argmin_exact = bool(np.all(oracle_mse <= two_stage_mse))
        ok &= ratio <= 1.25 and argmin_exact
        detail.append(f"{dist}: ratio={ratio:.4f} argmin={argmin_exact}")
    assert rep.finish(ok, "; ".join(detail))


def test_criterion_6_baseline_dominance(fb):
    rep = _Report(6, "mean two-stage MSE below mean MXFP4 MSE at block size 32")
    ok = True
    detail = []
    for dist, seed in (("gaussian", 51_000), ("student_t3", 52_000)):
        x = _suite_blocks(seed, 10_000, dist)
        qd = d.quantize_matrix(x, BLOCK, 1, "dialect", fb)
        qm = d.quantize_matrix(x, BLOCK, 1, "mx", fb)
        dialect_mse = float(np.mean((d.dequantize_matrix(qd, fb) - x) ** 2))
        mx_mse = float(np.mean((d.dequantize_matrix(qm, fb) - x) ** 2))
        ok &= dialect_mse < mx_mse
        detail.append(f"{dist}: {dialect_mse:.3e} < {mx_mse:.3e}")
    assert rep.finish(ok, "; ".join(detail))


def test_criterion_7_exhaustive_nearest_value_law(fb):
    rep = _Report(7, "512 quantize_element cases match the brute-force oracle")
    failures = 0
    for dialect in range(16):
        values = fb.dialects[dialect].values
        for q in range(32):
            got = d.quantize_element(q, fb.dialects[dialect])
            failures += got != nearest_index_bruteforce(q, values)
    assert rep.finish(failures == 0, f"{failures}/512 mismatches")


def test_criterion_8_streaming_equals_batch(fb):
    rep = _Report(8, "streaming cache bytes equal one-shot quantization")
    head_dim, channels = 64, 8
    ok = True
    for n_tokens in (BLOCK, 2 * BLOCK, 2 * BLOCK + 3, 5 * BLOCK - 1):
        keys = gaussian_matrix(81_000 + n_tokens, n_tokens, head_dim)
        values = student_t_matrix(82_000 + n_tokens, n_tokens, channels)
        kc = StreamingKeyCache(head_dim, BLOCK)
        vc = StreamingValueCache(channels, BLOCK)
        for i in range(n_tokens):
            d.append_token(kc, vc, keys[i], values[i], fb)
        k_q, v_q, residual = materialize(kc, vc, fb)
        sealed = (n_tokens // BLOCK) * BLOCK
        batch_v = d.quantize_matrix(values[:sealed], BLOCK, 0, "dialect", fb)
        batch_k = d.quantize_matrix(keys, BLOCK, 1, "dialect", fb)
        ok &= quantized_to_bytes(v_q) == quantized_to_bytes(batch_v)
        ok &= quantized_to_bytes(k_q) == quantized_to_bytes(batch_k)
        ok &= residual.shape[0] == n_tokens % BLOCK
    assert rep.finish(ok)


@pytest.mark.parametrize("fmt", ["dialect", "mx", "nv"])
def test_criterion_9_round_trip_idempotence(fb, fmt):
    rep = _Report(9, f"quantize(dequantize(quantize(T))) byte-identical [{fmt}]")
    flips = 0
    for trial in range(100):
        seed = 90_000 + trial
        if trial % 2 == 0:
            arr = gaussian_matrix(seed, 16, 64, scale=2.0 ** (trial % 7 - 3))
        else:
            arr = student_t_matrix(seed, 16, 64)
        q1 = d.quantize_matrix(arr, BLOCK, 1, fmt, fb)
        deq = d.dequantize_matrix(q1, fb)
        q2 = d.quantize_matrix(deq, BLOCK, 1, fmt, fb)
        flips += quantized_to_bytes(q1) != quantized_to_bytes(q2)
    assert rep.finish(flips == 0, f"{flips}/100 tensors changed bytes")


def test_criterion_10_gemm_end_to_end(fb):
    rep = _Report(10, "gemm-check: exact-mode bit equality; dialect beats mx >= 90%")
    wins = 0
    bit_exact = True
    for trial in range(20):
        a = gaussian_matrix(100_000 + trial, 64, 256)
        w = gaussian_matrix(100_500 + trial, 256, 64)
        ref = d.gemm_reference(a, w)
        rels = {}
        for fmt in ("dialect", "mx"):
            aq = d.quantize_matrix(a, BLOCK, 1, fmt, fb)
            wq = d.quantize_matrix(w, BLOCK, 0, fmt, fb)
            out = d.gemm(aq, wq, fb, d.AccumulatorMode.EXACT)
            if fmt == "dialect":
                bit_exact &= bool(
                    np.array_equal(out, d.dequantized_product(aq, wq, fb))
                )
            rels[fmt] = d.relative_frobenius_error(ref, out)
        wins += rels["dialect"] < rels["mx"]
    ok = bit_exact and wins >= 18
    assert rep.finish(ok, f"bit_exact={bit_exact} wins={wins}/20")
