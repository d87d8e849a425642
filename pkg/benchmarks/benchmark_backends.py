#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Usage:
    python benchmarks/benchmark_backends.py [--blocks N] [--iters N]

Covers the three hot paths: two-stage block quantization, the 16-dialect
MSE oracle sweep, and the blocked integer GEMM.  The first numba call per
kernel includes JIT compilation; warmup runs are excluded from timing.
Both backends must produce bit-identical outputs (verified here as well).
"""

import argparse
import time

import numpy as np

from dialectfp4 import _kernels, build_default_formatbook
from dialectfp4.gemm import _signed_half_units, quantize_matrix
from dialectfp4.rng import SplitMix64


def bench(fn, *args, iters=20, warmup=2, **kwargs):
    for _ in range(warmup):
        result = fn(*args, **kwargs)
    times = []
    for _ in range(iters):
        start = time.perf_counter()
        result = fn(*args, **kwargs)
        times.append(time.perf_counter() - start)
    return float(np.median(times)), result


def report(name, t_np, t_nb, identical):
    speedup = t_np / t_nb if t_nb > 0 else float("inf")
    flag = "" if identical else "  !! OUTPUT MISMATCH"
    print(
        f"{name:<28} numpy {t_np * 1e3:9.3f} ms   numba {t_nb * 1e3:9.3f} ms"
        f"   speedup {speedup:5.2f}x{flag}"
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--blocks", type=int, default=20_000)
    parser.add_argument("--iters", type=int, default=10)
    args = parser.parse_args()

    fb = build_default_formatbook()
    t = fb.tables
    gen = SplitMix64(2024)
    x = gen.gaussian(args.blocks * 32).reshape(args.blocks, 32)

    print(f"active backend: {_kernels.active_backend()}")
    print(f"quantizing {args.blocks} blocks of 32, {args.iters} iterations\n")

    quant_args = (x, t.values, t.thresholds, t.even_lo, t.even_hi, t.odd_lo, t.odd_hi)
    t_np, r_np = bench(
        _kernels.quantize_dialect_batch, *quant_args, backend="numpy", iters=args.iters
    )
    t_nb, r_nb = bench(
        _kernels.quantize_dialect_batch, *quant_args, backend="numba", iters=args.iters
    )
    same = all(np.array_equal(a, b) for a, b in zip(r_np, r_nb))
    report("two-stage quantization", t_np, t_nb, same)

    t_np, r_np = bench(
        _kernels.mse_select_batch, x, t.values, t.thresholds,
        backend="numpy", iters=args.iters,
    )
    t_nb, r_nb = bench(
        _kernels.mse_select_batch, x, t.values, t.thresholds,
        backend="numba", iters=args.iters,
    )
    same = all(np.array_equal(a, b) for a, b in zip(r_np, r_nb))
    report("16-dialect MSE oracle", t_np, t_nb, same)

    m = k = n = 256
    a = gen.gaussian(m * k).reshape(m, k)
    w = gen.gaussian(k * n).reshape(k, n)
    aq = quantize_matrix(a, 32, 1, "dialect", fb)
    wq = quantize_matrix(w, 32, 0, "dialect", fb)
    sv_a, sv_w = _signed_half_units(aq, fb), _signed_half_units(wq, fb)
    ea, ew = aq.scale.astype(np.int32), wq.scale.astype(np.int32)
    for fp16, label in ((False, "gemm 256^3 exact"), (True, "gemm 256^3 fp16 accum")):
        t_np, r_np = bench(
            _kernels.gemm_pow2, sv_a, ea, sv_w, ew, 32, fp16,
            backend="numpy", iters=args.iters,
        )
        t_nb, r_nb = bench(
            _kernels.gemm_pow2, sv_a, ea, sv_w, ew, 32, fp16,
            backend="numba", iters=args.iters,
        )
        report(label, t_np, t_nb, bool(np.array_equal(r_np, r_nb)))


if __name__ == "__main__":
    main()
