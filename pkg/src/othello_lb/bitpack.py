"""Little-endian bit packing of fixed-width unsigned values.

Value ``j`` of width ``l`` occupies bits ``[j*l, (j+1)*l)`` of the stream,
least-significant bit first; stream bit ``b`` lives in byte ``b // 8`` at bit
position ``b % 8``.
"""

from __future__ import annotations

import numpy as np
from numba import njit


def packed_size(count: int, width: int) -> int:
    """Bytes needed for ``count`` values of ``width`` bits."""
    return (count * width + 7) // 8


def pack_bits(values, width: int) -> bytes:
    if not 1 <= width <= 32:
        raise ValueError("width must be in 1..32")
    v = np.asarray(values, dtype=np.uint64)
    if v.size and int(v.max()) >> width:
        raise ValueError(f"value does not fit in {width} bits")
    bits = ((v[:, None] >> np.arange(width, dtype=np.uint64)) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def unpack_bits(data, count: int, width: int) -> np.ndarray:
    if not 1 <= width <= 32:
        raise ValueError("width must be in 1..32")
    raw = np.frombuffer(bytes(data), dtype=np.uint8)
    if raw.size < packed_size(count, width):
        raise ValueError("buffer too short for the declared values")
    bits = np.unpackbits(raw, bitorder="little")[: count * width].reshape(count, width)
    weights = np.uint64(1) << np.arange(width, dtype=np.uint64)
    return (bits.astype(np.uint64) @ weights).astype(np.uint32)


@njit(cache=True, inline="always")
def read_packed(buf, base, index, width, mask):
    """Read one value (width <= 16) from a byte buffer with 3 padding bytes."""
    bit = index * width
    b = base + (bit >> 3)
    word = np.uint32(buf[b]) | (np.uint32(buf[b + 1]) << 8) | (np.uint32(buf[b + 2]) << 16)
    return (word >> (bit & 7)) & mask
