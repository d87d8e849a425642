"""Per-block dialect selection: the two-stage method and the MSE oracle.

Stage 1 narrows the 16 dialects to the pair whose shared maximum matches
the block's maximum (quarter code rounded to half units).  Stage 2 picks
the pair member with more elements inside its beneficial range.  The MSE
oracle instead quantizes the block under every dialect and returns the
argmin of the exact mean squared error; it is the reference the two-stage
heuristic is measured against.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import InputError
from .fixedpoint import PreprocessedBlock, SharedExponent, round_to_half
from .formatbook import NUM_DIALECTS, Formatbook, pair_index_for_max


def select_pair(pre: PreprocessedBlock) -> tuple[int, int]:
    """Stage 1: (pair index, block maximum in half-units) for a block."""
    if pre.scale.zero_block:
        raise InputError("zero block has no pair; use the zero-block convention")
    block_max = round_to_half(int(pre.mags.max()))
    return pair_index_for_max(block_max), block_max


def select_dialect_two_stage(pre: PreprocessedBlock, fb: Formatbook) -> int:
    """Stage 1 + stage 2: the dialect id chosen by beneficial-range counting.

    Equal counts go to the even member, which carries the larger differing
    value.
    """
    pair, _ = select_pair(pre)
    t = fb.tables
    mags = pre.mags.astype(np.int64)
    count_even = int(np.count_nonzero((mags >= t.even_lo[pair]) & (mags < t.even_hi[pair])))
    count_odd = int(np.count_nonzero((mags >= t.odd_lo[pair]) & (mags < t.odd_hi[pair])))
    return 2 * pair if count_even >= count_odd else 2 * pair + 1


def select_dialect_mse(
    block, scale: SharedExponent, fb: Formatbook
) -> tuple[int, float]:
    """Brute-force oracle: argmin over all 16 dialects of the exact MSE.

    Every dialect quantizes the block through the same Q3.2 path as
    quantize_block_with_dialect; the error is measured against the exact
    real inputs.  Ties go to the lower dialect index.
    """
    if scale.zero_block:
        raise InputError("zero block has no dialect to select")
    arr = np.asarray(block, dtype=np.float64).reshape(-1)
    scaled = np.ldexp(np.abs(arr), 2 - scale.value)
    mags = np.minimum(np.floor(scaled), 31).astype(np.int64)
    signs = np.where((arr < 0) & (mags > 0), -1.0, 1.0)

    t = fb.tables
    best_dialect = 0
    best_mse = np.inf
    for dialect in range(NUM_DIALECTS):
        indices = np.searchsorted(t.thresholds[dialect], mags, side="right")
        half_units = t.values[dialect][indices].astype(np.float64)
        deq = signs * np.ldexp(half_units, scale.value - 1)
        err = deq - arr
        # Element-order accumulation keeps backends bit-comparable.
        total = 0.0
        for e in err:
            total += e * e
        mse = total / arr.size
        if mse < best_mse:
            best_mse = mse
            best_dialect = dialect
    return best_dialect, float(best_mse)


def selection_report(
    blocks: Iterable[PreprocessedBlock] | Sequence[PreprocessedBlock],
    fb: Formatbook,
) -> tuple[np.ndarray, int]:
    """Two-stage selection frequencies over many blocks.

    Returns (frequencies, count): a length-16 array summing to 1 over the
    nonzero blocks counted, and the number of nonzero blocks.  Zero blocks
    are skipped; an empty input yields all-zero frequencies and count 0.
    """
    counts = np.zeros(NUM_DIALECTS, dtype=np.int64)
    total = 0
    for pre in blocks:
        if pre.scale.zero_block:
            continue
        counts[select_dialect_two_stage(pre, fb)] += 1
        total += 1
    freqs = counts / total if total else np.zeros(NUM_DIALECTS, dtype=np.float64)
    return freqs, total
