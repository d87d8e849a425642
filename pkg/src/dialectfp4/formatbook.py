"""The 16-dialect formatbook: value sets, pairing, and beneficial ranges.

A *dialect* is a set of 8 representable magnitudes on a 0.5 grid, stored as
integers in half-units (13 means 6.5).  Dialects come in pairs: both members
share the same maximum magnitude and differ in exactly one value, the
*differing value*.  Pair ``p`` has maximum ``15 - p`` half-units, so the
eight pairs cover every possible block maximum from 4.0 to 7.5.

The *beneficial range* of a dialect is the interval of quarter-unit codes
where its differing value is at least as close to the data as the partner's;
stage-2 selection counts block elements inside these ranges.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import FormatbookError

NUM_DIALECTS = 16
NUM_PAIRS = 8
HALF_UNIT_MAX = 15  # 7.5 in half-units, the largest representable magnitude

# The six smallest FP4 E2M1 magnitudes in half-units: 0, 0.5, 1, 1.5, 2, 3.
BASE_MAGNITUDES = (0, 1, 2, 3, 4, 6)


@dataclass(frozen=True)
class DialectValueSet:
    """One dialect: 8 ascending half-unit magnitudes plus its differing value.

    Attributes:
        values: 8 strictly ascending half-unit integers, values[0] == 0.
        differing: the one magnitude not shared with the pair partner.
    """

    values: tuple[int, ...]
    differing: int

    @property
    def max_value(self) -> int:
        """Maximum magnitude in half-units (values[7])."""
        return self.values[-1]

    def index_of(self, value: int) -> int:
        return self.values.index(value)


@dataclass(frozen=True)
class BeneficialRange:
    """Half-open interval [lo, hi) of quarter-unit codes."""

    lo: int
    hi: int

    def __contains__(self, code: int) -> bool:
        return self.lo <= code < self.hi


class KernelTables(NamedTuple):
    """Formatbook content flattened into arrays for the batch kernels."""

    values: np.ndarray      # (16, 8) int64, half-units
    thresholds: np.ndarray  # (16, 7) int64, quarter codes; index = #(t <= q)
    even_lo: np.ndarray     # (8,) int64, quarter codes
    even_hi: np.ndarray
    odd_lo: np.ndarray
    odd_hi: np.ndarray


@dataclass(frozen=True)
class Formatbook:
    """16 dialects indexed 0-15; dialects 2p and 2p+1 form pair p.

    Immutable after construction; safe for concurrent reads.
    """

    dialects: tuple[DialectValueSet, ...]

    def pair(self, pair_index: int) -> tuple[DialectValueSet, DialectValueSet]:
        return self.dialects[2 * pair_index], self.dialects[2 * pair_index + 1]

    @cached_property
    def tables(self) -> KernelTables:
        values = np.array([d.values for d in self.dialects], dtype=np.int64)
        # Quantization threshold between adjacent values a < b sits at their
        # midpoint (a+b)/2 half-units, which is a+b in quarter codes.
        thresholds = values[:, :-1] + values[:, 1:]
        even_lo = np.empty(NUM_PAIRS, dtype=np.int64)
        even_hi = np.empty(NUM_PAIRS, dtype=np.int64)
        odd_lo = np.empty(NUM_PAIRS, dtype=np.int64)
        odd_hi = np.empty(NUM_PAIRS, dtype=np.int64)
        for p in range(NUM_PAIRS):
            even_r, odd_r = beneficial_ranges(self, p)
            even_lo[p], even_hi[p] = even_r.lo, even_r.hi
            odd_lo[p], odd_hi[p] = odd_r.lo, odd_r.hi
        return KernelTables(values, thresholds, even_lo, even_hi, odd_lo, odd_hi)


def _round_half_up(numerator: int, denominator: int) -> int:
    return (2 * numerator + denominator) // (2 * denominator)


def build_default_formatbook() -> Formatbook:
    """Construct the default 16-dialect formatbook.

    Pair p holds maximum 15 - p half-units.  Differing values are pinned at
    round(max * 10/13) for the even member and round(max * 8/13) for the odd
    member; a collision with a base magnitude, the pair maximum, or the
    partner steps the even value up and the odd value down until free.
    Every dialect is the six base magnitudes plus its differing value and
    the pair maximum.
    """
    dialects: list[DialectValueSet] = []
    for pair_idx in range(NUM_PAIRS):
        max_value = HALF_UNIT_MAX - pair_idx
        even_diff = _round_half_up(max_value * 10, 13)
        odd_diff = _round_half_up(max_value * 8, 13)
        taken = set(BASE_MAGNITUDES) | {max_value}
        while even_diff in taken or even_diff == odd_diff:
            even_diff += 1
            if even_diff >= max_value:
                raise AssertionError("no free even differing value")
        while odd_diff in taken or odd_diff == even_diff:
            odd_diff -= 1
            if odd_diff <= 0:
                raise AssertionError("no free odd differing value")
        for diff in (even_diff, odd_diff):
            values = tuple(sorted(set(BASE_MAGNITUDES) | {diff, max_value}))
            dialects.append(DialectValueSet(values=values, differing=diff))
    fb = Formatbook(dialects=tuple(dialects))
    violations = validate_formatbook(fb)
    if violations:
        raise AssertionError(f"default formatbook invalid: {violations}")
    return fb


def pair_index_for_max(block_max: int) -> int:
    """Map a block maximum in half-units (8..15) to its pair index (0..7)."""
    if not 8 <= block_max <= 15:
        raise FormatbookError(
            f"block maximum {block_max} outside the representable range [8, 15]"
        )
    return HALF_UNIT_MAX - block_max


def beneficial_ranges(
    fb: Formatbook, pair_idx: int
) -> tuple[BeneficialRange, BeneficialRange]:
    """Beneficial ranges (even, odd) of a pair, in quarter-unit codes.

    With the even differing value e, odd differing value o, pair maximum m,
    and c the largest value common to both dialects strictly below o, the
    midpoints between adjacent candidates give (all in quarter codes, where
    the half-unit midpoint (a+b)/2 is the quarter code a+b):

        even = [o + e, e + m)        odd = [c + o, o + e)
    """
    if not 0 <= pair_idx < NUM_PAIRS:
        raise FormatbookError(f"pair index {pair_idx} outside [0, 7]")
    even, odd = fb.pair(pair_idx)
    e, o, m = even.differing, odd.differing, even.max_value
    common_below = [v for v in even.values if v in odd.values and v < o]
    c = max(common_below)
    return (
        BeneficialRange(lo=o + e, hi=e + m),
        BeneficialRange(lo=c + o, hi=o + e),
    )


def validate_formatbook(fb: Formatbook) -> list[str]:
    """Check every formatbook invariant; returns a list of violations.

    An empty list means the formatbook is valid.  Each entry names the
    offending dialect or pair.
    """
    problems: list[str] = []
    if len(fb.dialects) != NUM_DIALECTS:
        problems.append(f"expected {NUM_DIALECTS} dialects, got {len(fb.dialects)}")
        return problems

    for idx, d in enumerate(fb.dialects):
        if len(d.values) != 8:
            problems.append(f"dialect {idx}: expected 8 values, got {len(d.values)}")
            continue
        if d.values[0] != 0:
            problems.append(f"dialect {idx}: values must start at 0")
        if any(b <= a for a, b in zip(d.values, d.values[1:])):
            problems.append(f"dialect {idx}: values not strictly ascending")
        if not 8 <= d.values[-1] <= HALF_UNIT_MAX:
            problems.append(f"dialect {idx}: max {d.values[-1]} outside [8, 15]")
        if any(v < 0 or v > HALF_UNIT_MAX for v in d.values):
            problems.append(f"dialect {idx}: value outside [0, 15]")
        base_present = sum(1 for v in d.values if v in BASE_MAGNITUDES)
        if base_present < 6:
            problems.append(
                f"dialect {idx}: only {base_present} base magnitudes present"
            )

    for p in range(NUM_PAIRS):
        even, odd = fb.pair(p)
        if len(even.values) != 8 or len(odd.values) != 8:
            continue
        if even.max_value != odd.max_value:
            problems.append(f"pair {p}: members have different maxima")
        if even.max_value != HALF_UNIT_MAX - p:
            problems.append(
                f"pair {p}: max {even.max_value} != {HALF_UNIT_MAX - p}"
            )
        only_even = set(even.values) - set(odd.values)
        only_odd = set(odd.values) - set(even.values)
        if len(only_even) != 1 or len(only_odd) != 1:
            problems.append(f"pair {p}: pair differs in more than one value")
            continue
        e, o = only_even.pop(), only_odd.pop()
        if e != even.differing:
            problems.append(f"dialect {2 * p}: differing value mislabelled")
        if o != odd.differing:
            problems.append(f"dialect {2 * p + 1}: differing value mislabelled")
        if e <= o:
            problems.append(f"pair {p}: even differing value not above odd's")
        for idx, diff, partner in ((2 * p, e, odd), (2 * p + 1, o, even)):
            if not 0 < diff < even.max_value:
                problems.append(
                    f"dialect {idx}: differing value {diff} not strictly inside (0, max)"
                )
            if diff in partner.values:
                problems.append(
                    f"dialect {idx}: differing value {diff} present in partner"
                )
    return problems


def load_formatbook(text: str) -> Formatbook:
    """Parse a formatbook config document and validate it.

    The document is line oriented: one dialect per line, the dialect index
    followed by its 8 ascending half-unit integers, whitespace separated.
    Lines starting with '#' and blank lines are ignored.
    """
    rows: dict[int, tuple[int, ...]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 9:
            raise FormatbookError(
                f"line {lineno}: expected dialect index plus 8 values, got "
                f"{len(parts)} fields"
            )
        try:
            numbers = [int(p) for p in parts]
        except ValueError as exc:
            raise FormatbookError(f"line {lineno}: {exc}") from exc
        idx = numbers[0]
        if not 0 <= idx < NUM_DIALECTS:
            raise FormatbookError(f"line {lineno}: dialect index {idx} out of range")
        if idx in rows:
            raise FormatbookError(f"line {lineno}: duplicate dialect {idx}")
        rows[idx] = tuple(numbers[1:])
    if len(rows) != NUM_DIALECTS:
        raise FormatbookError(
            f"document defines {len(rows)} dialects, expected {NUM_DIALECTS}"
        )

    dialects: list[DialectValueSet] = []
    for idx in range(NUM_DIALECTS):
        partner = rows[idx ^ 1]
        only_here = [v for v in rows[idx] if v not in partner]
        # Differing value is derived; validation reports pairing violations.
        differing = only_here[0] if len(only_here) == 1 else -1
        dialects.append(DialectValueSet(values=rows[idx], differing=differing))
    fb = Formatbook(dialects=tuple(dialects))
    violations = validate_formatbook(fb)
    if violations:
        raise FormatbookError("; ".join(violations))
    return fb


def dump_formatbook(fb: Formatbook) -> str:
    """Render a formatbook as a config document accepted by load_formatbook."""
    lines = ["# dialect index followed by 8 half-unit magnitudes"]
    for idx, d in enumerate(fb.dialects):
        lines.append(f"{idx} " + " ".join(str(v) for v in d.values))
    return "\n".join(lines) + "\n"
