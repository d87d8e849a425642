"""Bit-exact binary file formats for tensors and quantized matrices.

Both formats are little-endian with a 4-byte magic.  TensorFile (BDT1)
stores a finite float array row-major; QuantizedFile (BDQ1) stores a
block-quantized matrix, one record per block in row-major block-grid
order: a scale byte (signed shared exponent, -128 for an all-zero block;
E4M3 bits for the nv format), a dialect id byte (0xFF for mx/nv), and
ceil(B/2) bytes of packed nibbles with element i in byte i>>1, even
elements in the low nibble.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InputError
from .gemm import QuantizedMatrix, _check_blocking, _from_block_rows, _to_block_rows
from .quantize import E4M3_DECODE

TENSOR_MAGIC = b"BDT1"
QUANTIZED_MAGIC = b"BDQ1"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_FORMAT_CODES = {0: "dialect", 1: "mx", 2: "nv"}
_FORMAT_BYTES = {v: k for k, v in _FORMAT_CODES.items()}
ZERO_SENTINEL_BYTE = 0x80  # int8 -128 as unsigned


def tensor_to_bytes(array, dtype: str = "f64") -> bytes:
    """Serialize an array as a TensorFile."""
    if dtype not in ("f32", "f64"):
        raise InputError(f"dtype must be 'f32' or 'f64', got {dtype!r}")
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 0 or arr.ndim > 255:
        raise InputError(f"unsupported ndim {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InputError("tensor contains NaN or infinity")
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise InputError("dimension too large for u32")
    code = 1 if dtype == "f64" else 0
    payload = arr.astype(_DTYPE_CODES[code]).tobytes(order="C")
    header = TENSOR_MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + payload


def tensor_from_bytes(data: bytes) -> np.ndarray:
    """Parse a TensorFile; returns a float32 or float64 array."""
    if len(data) < 6 or data[:4] != TENSOR_MAGIC:
        raise InputError("not a tensor file (bad magic)")
    code, ndim = struct.unpack_from("<BB", data, 4)
    if code not in _DTYPE_CODES:
        raise InputError(f"unknown dtype code {code}")
    if ndim == 0:
        raise InputError("tensor must have at least one dimension")
    offset = 6
    if len(data) < offset + 4 * ndim:
        raise InputError("truncated tensor header")
    dims = struct.unpack_from(f"<{ndim}I", data, offset)
    offset += 4 * ndim
    dt = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64))
    expected = offset + count * dt.itemsize
    if len(data) != expected:
        raise InputError(
            f"payload length mismatch: file has {len(data)} bytes, expected {expected}"
        )
    arr = np.frombuffer(data, dtype=dt, count=count, offset=offset).reshape(dims)
    if not np.all(np.isfinite(arr)):
        raise InputError("tensor contains NaN or infinity")
    return arr.copy()


def write_tensor(path, array, dtype: str = "f64") -> None:
    Path(path).write_bytes(tensor_to_bytes(array, dtype))


def read_tensor(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return tensor_from_bytes(data)


def _packed_width(block_size: int) -> int:
    return (block_size + 1) // 2


def quantized_to_bytes(qm: QuantizedMatrix) -> bytes:
    """Serialize a QuantizedMatrix as a QuantizedFile."""
    if qm.fmt not in _FORMAT_BYTES:
        raise InputError(f"unknown format {qm.fmt!r}")
    header = QUANTIZED_MAGIC + struct.pack(
        "<BHBII", _FORMAT_BYTES[qm.fmt], qm.block_size, qm.axis, qm.rows, qm.cols
    )
    blocks = _to_block_rows(qm.codes, qm.block_size, qm.axis)
    nb = blocks.shape[0]
    if qm.block_size % 2:
        blocks = np.hstack([blocks, np.zeros((nb, 1), dtype=np.uint8)])
    packed = (blocks[:, 0::2] | (blocks[:, 1::2] << 4)).astype(np.uint8)
    scale = qm.scale.reshape(nb, 1).astype(np.uint8 if qm.fmt == "nv" else np.int8)
    scale = scale.view(np.uint8)
    if qm.fmt == "dialect":
        dialect = qm.dialect.reshape(nb, 1).astype(np.uint8)
    else:
        dialect = np.full((nb, 1), 0xFF, dtype=np.uint8)
    records = np.hstack([scale, dialect, packed])
    return header + records.tobytes(order="C")


def quantized_from_bytes(data: bytes) -> QuantizedMatrix:
    """Parse and validate a QuantizedFile."""
    if len(data) < 16 or data[:4] != QUANTIZED_MAGIC:
        raise InputError("not a quantized file (bad magic)")
    fmt_code, block_size, axis, rows, cols = struct.unpack_from("<BHBII", data, 4)
    if fmt_code not in _FORMAT_CODES:
        raise InputError(f"unknown format code {fmt_code}")
    fmt = _FORMAT_CODES[fmt_code]
    try:
        _check_blocking(rows, cols, block_size, axis)
    except InputError as exc:
        raise InputError(f"invalid quantized header: {exc}") from exc

    grid = (rows, cols // block_size) if axis == 1 else (rows // block_size, cols)
    nb = grid[0] * grid[1]
    width = 2 + _packed_width(block_size)
    expected = 16 + nb * width
    if len(data) != expected:
        raise InputError(
            f"payload length mismatch: file has {len(data)} bytes, expected {expected}"
        )
    records = np.frombuffer(data, dtype=np.uint8, offset=16).reshape(nb, width)

    scale_raw = records[:, 0]
    dialect_raw = records[:, 1]
    packed = records[:, 2:]
    codes = np.empty((nb, 2 * _packed_width(block_size)), dtype=np.uint8)
    codes[:, 0::2] = packed & 0x0F
    codes[:, 1::2] = packed >> 4
    codes = codes[:, :block_size]

    if fmt == "dialect":
        if np.any(dialect_raw > 15):
            raise InputError("dialect id outside [0, 15]")
        dialect_grid = dialect_raw.reshape(grid)
        scale = scale_raw.view(np.int8)
        zero = scale == -128
        if np.any(codes[zero] != 0):
            raise InputError("zero block carries nonzero codes")
    elif fmt == "mx":
        if np.any(dialect_raw != 0xFF):
            raise InputError("mx blocks must carry dialect id 0xFF")
        dialect_grid = None
        scale = scale_raw.view(np.int8)
        zero = scale == -128
        if np.any(codes[zero] != 0):
            raise InputError("zero block carries nonzero codes")
    else:
        if np.any(dialect_raw != 0xFF):
            raise InputError("nv blocks must carry dialect id 0xFF")
        dialect_grid = None
        if np.any(scale_raw & 0x80):
            raise InputError("nv scale byte has the sign bit set")
        if np.any(np.isnan(E4M3_DECODE[scale_raw.astype(np.int64)])):
            raise InputError("nv scale byte is an E4M3 NaN encoding")
        scale = scale_raw.copy()

    if np.any(((codes >> 3) == 1) & ((codes & 0x7) == 0)):
        raise InputError("zero magnitude carries a sign bit")

    return QuantizedMatrix(
        fmt=fmt,
        rows=rows,
        cols=cols,
        block_size=block_size,
        axis=axis,
        scale=scale.reshape(grid).copy(),
        dialect=dialect_grid.copy() if dialect_grid is not None else None,
        codes=_from_block_rows(codes, rows, cols, block_size, axis).copy(),
    )


def write_quantized(path, qm: QuantizedMatrix) -> None:
    Path(path).write_bytes(quantized_to_bytes(qm))


def read_quantized(path) -> QuantizedMatrix:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return quantized_from_bytes(data)


def tensor_to_csv(array) -> str:
    """Render a 1D or 2D tensor as CSV of floats (shortest round-trip repr)."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InputError(f"CSV conversion supports 1D/2D tensors, got ndim={arr.ndim}")
    lines = [",".join(repr(float(v)) for v in row) for row in arr]
    return "\n".join(lines) + "\n"


def csv_to_tensor(text: str) -> np.ndarray:
    """Parse CSV of floats into a 2D float64 tensor."""
    rows: list[list[float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            rows.append([float(f) for f in line.split(",")])
        except ValueError as exc:
            raise InputError(f"CSV line {lineno}: {exc}") from exc
    if not rows:
        raise InputError("CSV contains no data")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InputError("CSV rows have inconsistent lengths")
    arr = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InputError("CSV contains non-finite values")
    return arr
