"""Galois linear feedback shift registers for worst-case (no locality) traffic.

The 64-bit register uses taps 64, 63, 61, 60, which give the maximal period
2^64 - 1.  Each emitted word is the register after 64 further steps, so
consecutive words share no bits; 64 is coprime with 2^64 - 1, so the
decimated sequence keeps the full period and never repeats a word.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..hashing import FLOW_KEY_LEN

__all__ = ["LFSR", "KeyStream", "MASK16", "MASK64", "lfsr_keys", "lfsr_words"]

MASK64 = 0xD800000000000000  # taps 64, 63, 61, 60
MASK16 = 0xB400  # taps 16, 14, 13, 11


class LFSR:
    """Bit-serial Galois LFSR of arbitrary width (reference and small widths)."""

    def __init__(self, seed: int, width: int = 64, mask: int | None = None):
        if mask is None:
            mask = {64: MASK64, 16: MASK16}.get(width)
            if mask is None:
                raise ValueError(f"no default taps for width {width}")
        seed &= (1 << width) - 1
        if seed == 0:
            raise ValueError("LFSR seed must be nonzero")
        self.width = width
        self.mask = mask
        self.state = seed

    def step(self) -> int:
        lsb = self.state & 1
        self.state >>= 1
        if lsb:
            self.state ^= self.mask
        return self.state

    def __iter__(self):
        return self

    def __next__(self) -> int:
        return self.step()


def _jump_tables(mask: int, steps: int = 64) -> np.ndarray:
    """Byte tables for the linear map 'advance the register ``steps`` times'.

    Advancing is linear over GF(2), so the image of a state is the XOR of the
    images of its bytes: T[k][b] is the image of byte value b at byte k.
    """
    cols = []
    for i in range(64):
        r = LFSR.__new__(LFSR)
        r.width, r.mask, r.state = 64, mask, 1 << i
        for _ in range(steps):
            r.step()
        cols.append(r.state)
    tables = np.zeros((8, 256), dtype=np.uint64)
    for k in range(8):
        for b in range(256):
            v = 0
            for bit in range(8):
                if b >> bit & 1:
                    v ^= cols[8 * k + bit]
            tables[k, b] = v
    return tables


_JUMP64 = _jump_tables(MASK64)


@njit(cache=True, nogil=True)
def _fill(state, tables, out):
    s = state
    for i in range(out.shape[0]):
        t = np.uint64(0)
        for k in range(8):
            t ^= tables[k, np.int64((s >> np.uint64(8 * k)) & np.uint64(0xFF))]
        s = t
        out[i] = s
    return s


def lfsr_words(seed: int, count: int) -> tuple[np.ndarray, int]:
    """``count`` 64-bit words and the register state to continue from."""
    seed &= (1 << 64) - 1
    if seed == 0:
        raise ValueError("LFSR seed must be nonzero")
    out = np.empty(count, dtype=np.uint64)
    state = _fill(np.uint64(seed), _JUMP64, out)
    return out, int(state)


class KeyStream:
    """Continues one register across calls, so every key it ever returns is distinct."""

    def __init__(self, seed: int, vips=0xC0A80000, proto: int = 6):
        seed &= (1 << 64) - 1
        if seed == 0:
            raise ValueError("LFSR seed must be nonzero")
        self.state = seed
        self.vips = np.atleast_1d(np.asarray(vips, dtype=np.uint64))
        self.proto = proto

    def next(self, count: int) -> np.ndarray:
        words = np.empty(count, dtype=np.uint64)
        self.state = int(_fill(np.uint64(self.state), _JUMP64, words))
        out = np.empty((count, FLOW_KEY_LEN), dtype=np.uint8)
        _pack(words, self.vips, self.proto, out)
        return out


def lfsr_keys(seed: int, count: int, vips=0xC0A80000, proto: int = 6) -> np.ndarray:
    """``count`` distinct 13-byte flow keys from the 64-bit register.

    Each word supplies the source address (high 32 bits) and the two ports.
    ``vips`` is one VIP address or an array of them; with an array the VIP is
    picked from the word's own bits, so keys stay distinct.
    """
    words, _ = lfsr_words(seed, count)
    vips = np.atleast_1d(np.asarray(vips, dtype=np.uint64))
    out = np.empty((count, FLOW_KEY_LEN), dtype=np.uint8)
    _pack(words, vips, proto, out)
    return out


@njit(cache=True, nogil=True)
def _pack(words, vips, proto, out):
    nv = np.uint64(vips.shape[0])
    for i in range(words.shape[0]):
        w = words[i]
        # multiply-shift on the low 32 bits picks a VIP uniformly
        vip = vips[np.int64(((w & np.uint64(0xFFFFFFFF)) * nv) >> np.uint64(32))]
        for j in range(4):
            out[i, j] = np.uint8((w >> np.uint64(56 - 8 * j)) & np.uint64(0xFF))
            out[i, 4 + j] = np.uint8((vip >> np.uint64(24 - 8 * j)) & np.uint64(0xFF))
            out[i, 8 + j] = np.uint8((w >> np.uint64(24 - 8 * j)) & np.uint64(0xFF))
        out[i, 12] = proto
