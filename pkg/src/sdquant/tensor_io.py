"""Binary containers for float matrices (SDQT) and packed quantized weights (SDQW).

Float container layout::

    b"SDQT" | u8 version=1 | u32 rows | u32 cols | rows*cols f32   (little-endian)

Quantized container layout::

    b"SDQW" | u8 version=1 | u8 quantizer (0=binary, 1=ternary) | u8 hadamard
    | u64 seed | u32 rows | u32 cols_orig | u32 cols_up | u32 block_size
    | rows f32 row scales | rows * ceil(cols_up/4) packed code bytes

Symbols are packed four per byte, first symbol in the two most significant
bits, with codes 00 -> 0, 01 -> +1, 11 -> -1 (10 is reserved). Every row is
padded to a byte boundary with zero codes.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import FormatError

FLOAT_MAGIC = b"SDQT"
QUANT_MAGIC = b"SDQW"
VERSION = 1

_FLOAT_HEADER = struct.Struct("<4sBII")
_QUANT_HEADER = struct.Struct("<4sBBBQIIII")

QUANTIZER_KINDS = ("binary", "ternary")

# symbol value + 1 -> 2-bit code
_ENCODE = np.array([0b11, 0b00, 0b01], dtype=np.uint8)
# 2-bit code -> symbol value; index 2 is the reserved code
_DECODE = np.array([0, 1, 0, -1], dtype=np.int8)
_RESERVED = 0b10


def packed_row_bytes(count: int) -> int:
    return (count + 3) // 4


def pack_rows(symbols: np.ndarray) -> np.ndarray:
    """Pack a 2-D array of {-1, 0, +1} into a ``(rows, ceil(cols/4))`` uint8 array."""
    symbols = np.asarray(symbols)
    if symbols.ndim != 2:
        raise ValueError("pack_rows expects a 2-D symbol array")
    if symbols.size and not np.isin(symbols, (-1, 0, 1)).all():
        raise ValueError("symbols must lie in {-1, 0, +1}")
    rows, cols = symbols.shape
    width = packed_row_bytes(cols)
    codes = np.zeros((rows, width * 4), dtype=np.uint8)
    codes[:, :cols] = _ENCODE[symbols.astype(np.int64) + 1]
    codes = codes.reshape(rows, width, 4)
    return (codes[..., 0] << 6) | (codes[..., 1] << 4) | (codes[..., 2] << 2) | codes[..., 3]


def unpack_rows(packed: np.ndarray, cols: int, *, base_offset: int = 0) -> np.ndarray:
    """Inverse of :func:`pack_rows`. Raises :class:`FormatError` on the reserved code.

    ``base_offset`` is added to byte offsets reported in errors.
    """
    packed = np.asarray(packed, dtype=np.uint8)
    if packed.ndim != 2 or packed.shape[1] != packed_row_bytes(cols):
        raise ValueError(f"packed array has shape {packed.shape}, expected (*, {packed_row_bytes(cols)})")
    rows, width = packed.shape
    codes = np.stack(
        [(packed >> 6) & 0b11, (packed >> 4) & 0b11, (packed >> 2) & 0b11, packed & 0b11], axis=-1
    ).reshape(rows, width * 4)
    bad = np.flatnonzero(codes == _RESERVED)
    if bad.size:
        r, c = divmod(int(bad[0]), width * 4)
        raise FormatError(f"reserved code 0b10 at row {r}, symbol {c}",
                          offset=base_offset + r * width + c // 4)
    if np.any(codes[:, cols:]):
        raise FormatError("non-zero padding bits in packed row")
    return _DECODE[codes[:, :cols]]


def pack_trits(symbols: Sequence[int]) -> bytes:
    """Pack a flat sequence of trits into bytes (4 per byte, MSB first)."""
    arr = np.asarray(list(symbols), dtype=np.int8).reshape(1, -1)
    return pack_rows(arr).tobytes()


def unpack_trits(data: bytes, count: int) -> list[int]:
    if len(data) != packed_row_bytes(count):
        raise FormatError(f"expected {packed_row_bytes(count)} bytes for {count} symbols, got {len(data)}")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(1, -1)
    return unpack_rows(arr, count)[0].tolist()


def _require_finite(values: np.ndarray, base_offset: int, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError(f"non-finite value in {what}", offset=base_offset + 4 * int(bad[0]))


# --------------------------------------------------------------------------- floats


def save_float(matrix: np.ndarray, path: str | os.PathLike) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("matrix contains non-finite values")
    payload = np.ascontiguousarray(m, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_FLOAT_HEADER.pack(FLOAT_MAGIC, VERSION, m.shape[0], m.shape[1]))
        fh.write(payload.tobytes())


def load_float(path: str | os.PathLike) -> np.ndarray:
    """Read an SDQT file into a float64 array (values are exact widenings of the stored f32)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_float(raw)


def decode_float(raw: bytes) -> np.ndarray:
    if len(raw) < 4 or raw[:4] != FLOAT_MAGIC:
        raise FormatError("bad magic, expected SDQT", offset=0)
    if len(raw) < _FLOAT_HEADER.size:
        raise FormatError("truncated header", offset=len(raw))
    _, version, rows, cols = _FLOAT_HEADER.unpack_from(raw)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if rows < 1 or cols < 1:
        raise FormatError(f"invalid shape {rows}x{cols}", offset=5)
    need = _FLOAT_HEADER.size + 4 * rows * cols
    if len(raw) < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(raw)}", offset=len(raw))
    if len(raw) > need:
        raise FormatError("trailing bytes after payload", offset=need)
    values = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=_FLOAT_HEADER.size)
    _require_finite(values, _FLOAT_HEADER.size, "payload")
    return values.astype(np.float64).reshape(rows, cols)


# ------------------------------------------------------------------------ quantized


@dataclass(frozen=True, eq=False)
class QuantizedWeight:
    """Packed Sigma-Delta codes for one weight matrix.

    ``packed`` has shape ``(rows, ceil(cols_up / 4))``. Symbols live in the
    Hadamard-rotated domain when ``hadamard`` is set; each block of
    ``block_size`` input columns owns ``cols_up // n_blocks`` code columns.
    """

    rows: int
    cols_orig: int
    cols_up: int
    quantizer: str
    packed: np.ndarray
    row_scales: np.ndarray
    block_size: int
    hadamard: bool = False
    seed: int = 0
    _symbols: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.quantizer not in QUANTIZER_KINDS:
            raise ValueError(f"unknown quantizer kind {self.quantizer!r}")
        if self.rows < 1 or self.cols_orig < 1:
            raise ValueError("rows and cols_orig must be >= 1")
        if self.cols_up < self.cols_orig:
            raise ValueError(f"cols_up={self.cols_up} < cols_orig={self.cols_orig} (OSR < 1)")
        if self.block_size < 1 or self.cols_orig % self.block_size:
            raise ValueError(f"block_size={self.block_size} must divide cols_orig={self.cols_orig}")
        if self.cols_up % self.n_blocks:
            raise ValueError("cols_up must split evenly across blocks")
        if self.hadamard and self.block_size & (self.block_size - 1):
            raise ValueError("block_size must be a power of two when hadamard is on")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        packed = np.ascontiguousarray(self.packed, dtype=np.uint8)
        if packed.shape != (self.rows, packed_row_bytes(self.cols_up)):
            raise ValueError(f"packed codes have shape {packed.shape}")
        # scales are held at float32 precision so the container round-trips exactly
        scales = np.asarray(self.row_scales, dtype=np.float64).astype(np.float32).astype(np.float64)
        if scales.shape != (self.rows,):
            raise ValueError("need exactly one scale per row")
        if not (np.isfinite(scales).all() and (scales > 0).all()):
            raise ValueError("row scales must be finite and > 0")
        object.__setattr__(self, "packed", packed)
        object.__setattr__(self, "row_scales", scales)
        symbols = self._symbols if self._symbols is not None else unpack_rows(packed, self.cols_up)
        if self.quantizer == "binary" and not np.all(symbols != 0):
            raise ValueError("binary quantized weight contains a 0 symbol")
        symbols = symbols.astype(np.int8, copy=False)
        symbols.flags.writeable = False
        object.__setattr__(self, "_symbols", symbols)

    @classmethod
    def from_symbols(cls, symbols: np.ndarray, row_scales, *, cols_orig: int, quantizer: str,
                     block_size: int, hadamard: bool = False, seed: int = 0) -> "QuantizedWeight":
        symbols = np.asarray(symbols)
        if symbols.ndim != 2:
            raise ValueError("symbols must be 2-D")
        if quantizer == "binary" and np.any(symbols == 0):
            raise ValueError("binary quantized weight contains a 0 symbol")
        rows, cols_up = symbols.shape
        return cls(rows=rows, cols_orig=cols_orig, cols_up=cols_up, quantizer=quantizer,
                   packed=pack_rows(symbols), row_scales=row_scales, block_size=block_size,
                   hadamard=hadamard, seed=seed, _symbols=np.array(symbols, dtype=np.int8))

    @property
    def symbols(self) -> np.ndarray:
        return self._symbols

    @property
    def n_blocks(self) -> int:
        return self.cols_orig // self.block_size

    @property
    def block_width(self) -> int:
        """Number of code columns per block of ``block_size`` input columns."""
        return self.cols_up // self.n_blocks

    @property
    def osr(self) -> float:
        """Effective oversampling ratio realised by the stored widths."""
        return self.cols_up / self.cols_orig

    def __eq__(self, other):
        if not isinstance(other, QuantizedWeight):
            return NotImplemented
        return (
            (self.rows, self.cols_orig, self.cols_up, self.quantizer, self.block_size, self.hadamard, self.seed)
            == (other.rows, other.cols_orig, other.cols_up, other.quantizer, other.block_size, other.hadamard,
                other.seed)
            and np.array_equal(self.packed, other.packed)
            and np.array_equal(self.row_scales, other.row_scales)
        )


def encode_quantized(q: QuantizedWeight) -> bytes:
    if q.quantizer == "binary" and np.any(q.symbols == 0):
        raise ValueError("binary quantized weight contains a 0 symbol")
    scales32 = q.row_scales.astype("<f4")
    header = _QUANT_HEADER.pack(
        QUANT_MAGIC, VERSION, QUANTIZER_KINDS.index(q.quantizer), int(q.hadamard), q.seed,
        q.rows, q.cols_orig, q.cols_up, q.block_size,
    )
    return header + scales32.tobytes() + q.packed.tobytes()


def decode_quantized(raw: bytes) -> QuantizedWeight:
    if len(raw) < 4 or raw[:4] != QUANT_MAGIC:
        raise FormatError("bad magic, expected SDQW", offset=0)
    if len(raw) < _QUANT_HEADER.size:
        raise FormatError("truncated header", offset=len(raw))
    _, version, kind, had, seed, rows, cols_orig, cols_up, block = _QUANT_HEADER.unpack_from(raw)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if kind > 1:
        raise FormatError(f"unknown quantizer byte {kind}", offset=5)
    if had > 1:
        raise FormatError(f"bad hadamard byte {had}", offset=6)
    offset = _QUANT_HEADER.size
    width = packed_row_bytes(cols_up)
    need = offset + 4 * rows + rows * width
    if len(raw) < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(raw)}", offset=len(raw))
    if len(raw) > need:
        raise FormatError("trailing bytes after payload", offset=need)
    scales = np.frombuffer(raw, dtype="<f4", count=rows, offset=offset)
    _require_finite(scales, offset, "row scales")
    codes_at = offset + 4 * rows
    packed = np.frombuffer(raw, dtype=np.uint8, count=rows * width, offset=codes_at).reshape(rows, width)
    symbols = unpack_rows(packed, cols_up, base_offset=codes_at)
    quantizer = QUANTIZER_KINDS[kind]
    if quantizer == "binary" and np.any(symbols == 0):
        raise FormatError("binary container holds a 0 symbol", offset=codes_at)
    try:
        return QuantizedWeight(rows=rows, cols_orig=cols_orig, cols_up=cols_up, quantizer=quantizer,
                               packed=packed.copy(), row_scales=scales.astype(np.float64),
                               block_size=block, hadamard=bool(had), seed=seed, _symbols=symbols)
    except ValueError as exc:
        raise FormatError(f"invalid header fields: {exc}", offset=5) from None


def save_quantized(q: QuantizedWeight, path: str | os.PathLike) -> None:
    data = encode_quantized(q)
    with open(path, "wb") as fh:
        fh.write(data)


def load_quantized(path: str | os.PathLike) -> QuantizedWeight:
    with open(path, "rb") as fh:
        return decode_quantized(fh.read())
