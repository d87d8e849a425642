"""Command-line surface: profiling, quantization, comparison, GEMM checks.

Subcommands: profile | quantize | dequantize | compare | select-report |
gemm-check, plus gen (seeded tensor generator) and to-csv / from-csv
converters.  Reports are CSV on stdout or --out; binary outputs require
--out.  Exit codes: 0 success, 2 input error, 3 invariant/assertion
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InputError, VerificationError
from .fileio import (
    csv_to_tensor,
    read_quantized,
    read_tensor,
    tensor_to_csv,
    write_quantized,
    write_tensor,
)
from .formatbook import Formatbook, build_default_formatbook, load_formatbook
from .gemm import (
    AccumulatorMode,
    dequantize_matrix,
    dequantized_product,
    effective_bitwidth,
    gemm,
    gemm_reference,
    quantize_matrix,
    relative_frobenius_error,
)

_AXIS = {"rows": 0, "cols": 1}


def _fmt_num(v: float) -> str:
    return f"{v:.9g}"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_fb(args) -> Formatbook:
    if getattr(args, "formatbook", None):
        try:
            doc = Path(args.formatbook).read_text()
        except OSError as exc:
            raise InputError(f"cannot read {args.formatbook}: {exc}") from exc
        return load_formatbook(doc)
    return build_default_formatbook()


def _flat_blocks(path: str, block_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Read a tensor and view it as (num_blocks, block_size), row-major."""
    arr = read_tensor(path).astype(np.float64)
    flat = arr.reshape(-1)
    if flat.size == 0:
        raise InputError("tensor is empty")
    if flat.size % block_size != 0:
        raise InputError(
            f"tensor size {flat.size} not divisible by block size {block_size}"
        )
    return flat.reshape(-1, block_size), flat


def cmd_profile(args) -> int:
    blocks, _ = _flat_blocks(args.input, args.block_size)
    absx = np.abs(blocks)
    se, nonzero = _kernels._shared_exponents(absx)
    mags, _ = _kernels._quarter_codes(blocks, absx, se, nonzero)

    mag_counts = np.bincount(mags.reshape(-1), minlength=32)
    block_max = np.minimum((mags.max(axis=1) + 1) >> 1, 15)
    max_counts = np.bincount(block_max[nonzero], minlength=16)[8:16]
    zero_blocks = int(np.count_nonzero(~nonzero))

    lines = ["kind,bin,value,count"]
    for code in range(32):
        lines.append(f"mag,{code},{_fmt_num(code * 0.25)},{int(mag_counts[code])}")
    for half in range(8, 16):
        lines.append(f"max,{half},{_fmt_num(half * 0.5)},{int(max_counts[half - 8])}")
    lines.append(f"zero_blocks,,,{zero_blocks}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_quantize(args) -> int:
    if not args.out:
        raise InputError("quantize writes a binary file; --out is required")
    arr = read_tensor(args.input)
    if arr.ndim != 2:
        raise InputError(f"quantize expects a 2D tensor, got ndim={arr.ndim}")
    fb = _load_fb(args)
    qm = quantize_matrix(
        arr.astype(np.float64), args.block_size, _AXIS[args.axis], args.format, fb
    )
    write_quantized(args.out, qm)
    return 0


def cmd_dequantize(args) -> int:
    if not args.out:
        raise InputError("dequantize writes a binary file; --out is required")
    qm = read_quantized(args.input)
    fb = _load_fb(args)
    write_tensor(args.out, dequantize_matrix(qm, fb), dtype="f64")
    return 0


def _oracle_dequantize(
    blocks: np.ndarray, se: np.ndarray, dialects: np.ndarray, fb: Formatbook
) -> np.ndarray:
    """Dequantized blocks under per-block oracle-selected dialects."""
    t = fb.tables
    nb, blen = blocks.shape
    nonzero = se != -128
    mags = np.zeros(blocks.shape, dtype=np.int64)
    if nonzero.any():
        scaled = np.ldexp(
            np.abs(blocks[nonzero]),
            (2 - se[nonzero].astype(np.int64))[:, None].astype(np.int32),
        )
        mags[nonzero] = np.minimum(np.floor(scaled), 31).astype(np.int64)
    row_thr = t.thresholds[dialects.astype(np.int64)]
    indices = (mags[:, :, None] >= row_thr[:, None, :]).sum(axis=2)
    half = np.take_along_axis(
        t.values[dialects.astype(np.int64)], indices, axis=1
    ).astype(np.float64)
    exps = np.where(nonzero, se.astype(np.int64), 0)[:, None] - 1
    deq = np.ldexp(half, exps.astype(np.int32))
    deq[~nonzero] = 0.0
    return np.where((blocks < 0) & (mags > 0), -deq, deq)


def cmd_compare(args) -> int:
    fb = _load_fb(args)
    blocks, flat = _flat_blocks(args.input, args.block_size)
    nb, blen = blocks.shape

    rows = []
    for fmt in args.formats:
        qm = quantize_matrix(blocks, args.block_size, 1, fmt, fb)
        deq = dequantize_matrix(qm, fb)
        per_block = np.mean((deq - blocks) ** 2, axis=1)
        rows.append(
            (
                fmt,
                float(per_block.mean()),
                float(per_block.max()),
                relative_frobenius_error(blocks, deq),
                effective_bitwidth(fmt, args.block_size),
            )
        )
        if fmt == "dialect":
            t = fb.tables
            se, best, best_mse = _kernels.mse_select_batch(blocks, t.values, t.thresholds)
            deq_o = _oracle_dequantize(blocks, se, best, fb)
            per_block_o = np.mean((deq_o - blocks) ** 2, axis=1)
            rows.append(
                (
                    "dialect_mse",
                    float(per_block_o.mean()),
                    float(per_block_o.max()),
                    relative_frobenius_error(blocks, deq_o),
                    effective_bitwidth("dialect", args.block_size),
                )
            )

    lines = ["format,mean_block_mse,worst_block_mse,rel_frobenius_error,effective_bits"]
    for fmt, mean_mse, worst, rel, bits in rows:
        lines.append(
            f"{fmt},{_fmt_num(mean_mse)},{_fmt_num(worst)},{_fmt_num(rel)},{_fmt_num(bits)}"
        )
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_select_report(args) -> int:
    fb = _load_fb(args)
    blocks, _ = _flat_blocks(args.input, args.block_size)
    t = fb.tables
    se, two_stage, _codes = _kernels.quantize_dialect_batch(
        blocks, t.values, t.thresholds, t.even_lo, t.even_hi, t.odd_lo, t.odd_hi
    )
    _, oracle, _mse = _kernels.mse_select_batch(blocks, t.values, t.thresholds)
    nonzero = se != -128
    count = int(np.count_nonzero(nonzero))
    ts = two_stage[nonzero]
    orc = oracle[nonzero]
    freq_ts = np.bincount(ts, minlength=16) / count if count else np.zeros(16)
    freq_or = np.bincount(orc, minlength=16) / count if count else np.zeros(16)
    agreement = float(np.mean(ts == orc)) if count else 0.0

    lines = ["dialect,two_stage,mse_oracle"]
    for d in range(16):
        lines.append(f"{d},{_fmt_num(freq_ts[d])},{_fmt_num(freq_or[d])}")
    lines.append(f"nonzero_blocks,{count},")
    lines.append(f"agreement,{_fmt_num(agreement)},")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_gemm_check(args) -> int:
    fb = _load_fb(args)
    a = read_tensor(args.a).astype(np.float64)
    w = read_tensor(args.w).astype(np.float64)
    if a.ndim != 2 or w.ndim != 2:
        raise InputError("gemm-check expects 2D tensors")
    mode = AccumulatorMode.parse(args.mode)
    reference = gemm_reference(a, w)

    formats = [args.format] + (["mx"] if args.format != "mx" else [])
    lines = ["format,mode,rel_frobenius_error,bit_exact"]
    failure: str | None = None
    for fmt in formats:
        aq = quantize_matrix(a, args.block_size, 1, fmt, fb)
        wq = quantize_matrix(w, args.block_size, 0, fmt, fb)
        out = gemm(aq, wq, fb, mode)
        rel = relative_frobenius_error(reference, out)
        bit_exact = ""
        if fmt == "dialect" and mode is AccumulatorMode.EXACT:
            oracle = dequantized_product(aq, wq, fb)
            ok = bool(np.array_equal(out, oracle))
            bit_exact = "yes" if ok else "no"
            if not ok:
                failure = (
                    "dialect exact-mode output differs from dequantize-then-multiply"
                )
        lines.append(f"{fmt},{mode.value},{_fmt_num(rel)},{bit_exact}")
    _emit("\n".join(lines) + "\n", args.out)
    if failure:
        raise VerificationError(failure)
    return 0


def cmd_gen(args) -> int:
    from . import rng

    if not args.out:
        raise InputError("gen writes a binary file; --out is required")
    if args.dist == "gaussian":
        arr = rng.gaussian_matrix(args.seed, args.rows, args.cols, args.scale)
    elif args.dist == "student-t3":
        arr = rng.student_t_matrix(args.seed, args.rows, args.cols, 3, args.scale)
    else:
        arr = rng.uniform_matrix(args.seed, args.rows, args.cols, args.scale)
    write_tensor(args.out, arr, dtype="f64")
    return 0


def cmd_to_csv(args) -> int:
    arr = read_tensor(args.input)
    if arr.ndim > 2:
        raise InputError("to-csv supports 1D/2D tensors")
    _emit(tensor_to_csv(arr), args.out)
    return 0


def cmd_from_csv(args) -> int:
    if not args.out:
        raise InputError("from-csv writes a binary file; --out is required")
    try:
        text = Path(args.input).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {args.input}: {exc}") from exc
    write_tensor(args.out, csv_to_tensor(text), dtype="f64")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialectfp4",
        description="Block-wise mixed-format 4-bit quantization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, formatbook=True, out=True):
        p.add_argument("--block-size", type=int, default=32)
        if formatbook:
            p.add_argument("--formatbook", help="formatbook config file")
        if out:
            p.add_argument("--out", help="output path (default: stdout for CSV)")

    p = sub.add_parser("profile", help="magnitude and block-max histograms")
    p.add_argument("input")
    common(p, formatbook=False)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("quantize", help="quantize a 2D tensor file")
    p.add_argument("input")
    p.add_argument("--axis", choices=("rows", "cols"), default="cols")
    p.add_argument("--format", choices=("dialect", "mx", "nv"), default="dialect")
    common(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("dequantize", help="reconstruct a tensor file")
    p.add_argument("input")
    p.add_argument("--formatbook", help="formatbook config file")
    p.add_argument("--out", help="output path")
    p.set_defaults(func=cmd_dequantize)

    p = sub.add_parser("compare", help="per-format quantization error table")
    p.add_argument("input")
    p.add_argument(
        "--formats",
        nargs="+",
        choices=("dialect", "mx", "nv"),
        default=["dialect", "mx", "nv"],
    )
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("select-report", help="dialect selection frequencies")
    p.add_argument("input")
    common(p)
    p.set_defaults(func=cmd_select_report)

    p = sub.add_parser("gemm-check", help="quantized GEMM error and exactness check")
    p.add_argument("a")
    p.add_argument("w")
    p.add_argument("--format", choices=("dialect", "mx", "nv"), default="dialect")
    p.add_argument("--mode", choices=("exact", "fp16"), default="exact")
    common(p)
    p.set_defaults(func=cmd_gemm_check)

    p = sub.add_parser("gen", help="generate a seeded random tensor file")
    p.add_argument("rows", type=int)
    p.add_argument("cols", type=int)
    p.add_argument(
        "--dist", choices=("gaussian", "student-t3", "uniform"), default="gaussian"
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out", help="output path")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("to-csv", help="tensor file to CSV")
    p.add_argument("input")
    p.add_argument("--out")
    p.set_defaults(func=cmd_to_csv)

    p = sub.add_parser("from-csv", help="CSV to tensor file")
    p.add_argument("input")
    p.add_argument("--out")
    p.set_defaults(func=cmd_from_csv)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
