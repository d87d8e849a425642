"""Streaming KV-cache quantization with a high-precision residual chunk.

Keys are quantized sub-token-wise the moment they arrive: each key row is
split into head_dim/B blocks and appended in 4-bit form.  Values need
sub-channel blocks (B consecutive tokens per channel), so recent rows sit
in a full-precision residual buffer; once B rows accumulate, the whole
chunk is quantized per channel and sealed.  Sealed chunks are never
requantized, which keeps the streaming content bit-identical to one-shot
batch quantization of the same rows.

Single-writer append; materialize only at externally synchronized points.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .formatbook import Formatbook
from .gemm import QuantizedMatrix, quantize_matrix


class StreamingKeyCache:
    """Append-only cache of key rows, quantized sub-token-wise."""

    def __init__(self, head_dim: int, block_size: int):
        if head_dim % block_size != 0:
            raise InputError(
                f"head_dim {head_dim} not divisible by block size {block_size}"
            )
        self.head_dim = head_dim
        self.block_size = block_size
        self._scales: list[np.ndarray] = []
        self._dialects: list[np.ndarray] = []
        self._codes: list[np.ndarray] = []

    @property
    def token_count(self) -> int:
        return len(self._codes)

    def append(self, key_row, fb: Formatbook) -> None:
        row = np.asarray(key_row, dtype=np.float64).reshape(-1)
        if row.size != self.head_dim:
            raise InputError(f"key row length {row.size} != head_dim {self.head_dim}")
        qm = quantize_matrix(row[None, :], self.block_size, axis=1, fmt="dialect", fb=fb)
        self._scales.append(qm.scale[0])
        self._dialects.append(qm.dialect[0])
        self._codes.append(qm.codes[0])

    def materialize(self) -> QuantizedMatrix:
        n = self.token_count
        blocks_per_row = self.head_dim // self.block_size
        if n:
            scale = np.vstack(self._scales)
            dialect = np.vstack(self._dialects)
            codes = np.vstack(self._codes)
        else:
            scale = np.empty((0, blocks_per_row), dtype=np.int8)
            dialect = np.empty((0, blocks_per_row), dtype=np.uint8)
            codes = np.empty((0, self.head_dim), dtype=np.uint8)
        return QuantizedMatrix(
            fmt="dialect",
            rows=n,
            cols=self.head_dim,
            block_size=self.block_size,
            axis=1,
            scale=scale,
            dialect=dialect,
            codes=codes,
        )


class StreamingValueCache:
    """Append-only cache of value rows with sub-channel sealed chunks."""

    def __init__(self, num_channels: int, block_size: int):
        self.num_channels = num_channels
        self.block_size = block_size
        self._sealed_scales: list[np.ndarray] = []   # each (1, num_channels) int8
        self._sealed_dialects: list[np.ndarray] = []
        self._sealed_codes: list[np.ndarray] = []    # each (B, num_channels) uint8
        self._residual: list[np.ndarray] = []

    @property
    def token_count(self) -> int:
        return self.block_size * len(self._sealed_codes) + len(self._residual)

    @property
    def sealed_token_count(self) -> int:
        return self.block_size * len(self._sealed_codes)

    @property
    def residual_len(self) -> int:
        return len(self._residual)

    def append(self, value_row, fb: Formatbook) -> None:
        row = np.asarray(value_row, dtype=np.float64).reshape(-1)
        if row.size != self.num_channels:
            raise InputError(
                f"value row length {row.size} != num_channels {self.num_channels}"
            )
        if not np.all(np.isfinite(row)):
            raise InputError("value row contains NaN or infinity")
        self._residual.append(row.copy())
        if len(self._residual) == self.block_size:
            chunk = np.vstack(self._residual)
            qm = quantize_matrix(chunk, self.block_size, axis=0, fmt="dialect", fb=fb)
            self._sealed_scales.append(qm.scale)
            self._sealed_dialects.append(qm.dialect)
            self._sealed_codes.append(qm.codes)
            self._residual.clear()

    def materialize(self) -> tuple[QuantizedMatrix, np.ndarray]:
        sealed = self.sealed_token_count
        chunks = len(self._sealed_codes)
        if chunks:
            scale = np.vstack(self._sealed_scales)
            dialect = np.vstack(self._sealed_dialects)
            codes = np.vstack(self._sealed_codes)
        else:
            scale = np.empty((0, self.num_channels), dtype=np.int8)
            dialect = np.empty((0, self.num_channels), dtype=np.uint8)
            codes = np.empty((0, self.num_channels), dtype=np.uint8)
        value_matrix = QuantizedMatrix(
            fmt="dialect",
            rows=sealed,
            cols=self.num_channels,
            block_size=self.block_size,
            axis=0,
            scale=scale,
            dialect=dialect,
            codes=codes,
        )
        if self._residual:
            residual = np.vstack(self._residual)
        else:
            residual = np.empty((0, self.num_channels), dtype=np.float64)
        return value_matrix, residual


def append_token(
    kc: StreamingKeyCache,
    vc: StreamingValueCache,
    key_row,
    value_row,
    fb: Formatbook,
) -> None:
    """Append one token's key and value rows to both caches.

    Dimensions are validated before either cache mutates.
    """
    key = np.asarray(key_row, dtype=np.float64).reshape(-1)
    value = np.asarray(value_row, dtype=np.float64).reshape(-1)
    if key.size != kc.head_dim:
        raise InputError(f"key row length {key.size} != head_dim {kc.head_dim}")
    if value.size != vc.num_channels:
        raise InputError(
            f"value row length {value.size} != num_channels {vc.num_channels}"
        )
    kc.append(key, fb)
    vc.append(value, fb)


def materialize(
    kc: StreamingKeyCache, vc: StreamingValueCache, fb: Formatbook | None = None
) -> tuple[QuantizedMatrix, QuantizedMatrix, np.ndarray]:
    """Expose both caches as quantized matrices plus the value residual.

    Returns (K_q, V_q, V_residual); the residual holds the most recent
    N mod B value rows in full precision for the caller to multiply
    exactly.
    """
    key_matrix = kc.materialize()
    value_matrix, residual = vc.materialize()
    return key_matrix, value_matrix, residual
