"""Seeded 32-bit key hashing and the canonical flow-key layout.

Keys are fixed-length byte strings held as rows of a 2-D ``uint8`` array so
batches can be hashed inside compiled loops.  ``H(key, seed)`` absorbs the key
eight bytes at a time into a 64-bit state with the splitmix64 finalizer and
returns the high 32 bits.  The seed is mixed in non-linearly, so two keys that
collide under one seed are independent under another; a seeded CRC does not
have that property (its collisions are seed-invariant), which would make some
key sets impossible to place no matter how many seed pairs are tried.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit

__all__ = [
    "FLOW_KEY_LEN",
    "FlowKey",
    "as_key_array",
    "flow_keys",
    "hash32",
    "hash_keys",
    "hash_row",
    "hash_row2",
    "hash_row3",
    "key_vips",
    "pack_flows",
]

FLOW_KEY_LEN = 13

_M32 = np.uint64(0xFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_K1 = np.uint64(0xBF58476D1CE4E5B9)
_K2 = np.uint64(0x94D049BB133111EB)
_S8 = np.uint64(8)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_S56 = np.uint64(56)


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _K1
    z = (z ^ (z >> _S27)) * _K2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def hash_row(key, seed):
    """H(key, seed) for one key row, as a uint64 holding 32 significant bits."""
    n = key.shape[0]
    h = _mix64((np.uint64(seed) + _GOLDEN) ^ (np.uint64(n) << _S56))
    i = 0
    while i + 8 <= n:
        w = np.uint64(0)
        for j in range(8):
            w |= np.uint64(key[i + j]) << (_S8 * np.uint64(j))
        h = _mix64(h ^ w) + _GOLDEN
        i += 8
    if i < n:
        w = np.uint64(0)
        for j in range(n - i):
            w |= np.uint64(key[i + j]) << (_S8 * np.uint64(j))
        h = _mix64(h ^ w) + _GOLDEN
    return _mix64(h) >> _S32


@njit(cache=True, inline="always")
def hash_row2(key, seed1, seed2):
    """H(key, seed1), H(key, seed2) in one pass over the key (two independent chains)."""
    n = key.shape[0]
    tag = np.uint64(n) << _S56
    h1 = _mix64((np.uint64(seed1) + _GOLDEN) ^ tag)
    h2 = _mix64((np.uint64(seed2) + _GOLDEN) ^ tag)
    i = 0
    while i < n:
        w = np.uint64(0)
        top = min(i + 8, n)
        for j in range(i, top):
            w |= np.uint64(key[j]) << (_S8 * np.uint64(j - i))
        h1 = _mix64(h1 ^ w) + _GOLDEN
        h2 = _mix64(h2 ^ w) + _GOLDEN
        i = top
    return _mix64(h1) >> _S32, _mix64(h2) >> _S32


@njit(cache=True, inline="always")
def hash_row3(key, seed1, seed2, seed3):
    """Three seeds of H in one pass over the key."""
    n = key.shape[0]
    tag = np.uint64(n) << _S56
    h1 = _mix64((np.uint64(seed1) + _GOLDEN) ^ tag)
    h2 = _mix64((np.uint64(seed2) + _GOLDEN) ^ tag)
    h3 = _mix64((np.uint64(seed3) + _GOLDEN) ^ tag)
    i = 0
    while i < n:
        w = np.uint64(0)
        top = min(i + 8, n)
        for j in range(i, top):
            w |= np.uint64(key[j]) << (_S8 * np.uint64(j - i))
        h1 = _mix64(h1 ^ w) + _GOLDEN
        h2 = _mix64(h2 ^ w) + _GOLDEN
        h3 = _mix64(h3 ^ w) + _GOLDEN
        i = top
    return _mix64(h1) >> _S32, _mix64(h2) >> _S32, _mix64(h3) >> _S32


@njit(cache=True, nogil=True)
def _hash_batch(keys, seed, out):
    for i in range(keys.shape[0]):
        out[i] = hash_row(keys[i], seed)


_M64 = (1 << 64) - 1


def _mix64_py(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def hash32(key: bytes, seed: int) -> int:
    """H(key, seed) in plain Python; the compiled kernels must agree with it."""
    key = bytes(key)
    n = len(key)
    h = _mix64_py(((seed + 0x9E3779B97F4A7C15) & _M64) ^ ((n << 56) & _M64))
    for i in range(0, n, 8):
        w = int.from_bytes(key[i:i + 8], "little")
        h = (_mix64_py(h ^ w) + 0x9E3779B97F4A7C15) & _M64
    return _mix64_py(h) >> 32


def hash_keys(keys: np.ndarray, seed: int) -> np.ndarray:
    """Vectorised H over the rows of a 2-D uint8 key array."""
    keys = as_key_array(keys)
    out = np.empty(keys.shape[0], dtype=np.uint32)
    _hash_batch(keys, np.uint64(seed & 0xFFFFFFFF), out)
    return out


@dataclass(frozen=True, slots=True)
class FlowKey:
    """Canonical 13-byte connection tuple.

    Packed in network byte order: source address, destination VIP, source
    port, destination port, protocol.
    """

    src: int
    vip: int
    sport: int
    dport: int
    proto: int = 6

    def pack(self) -> bytes:
        return struct.pack("!IIHHB", self.src, self.vip, self.sport, self.dport, self.proto)

    @classmethod
    def unpack(cls, raw: bytes) -> FlowKey:
        return cls(*struct.unpack("!IIHHB", bytes(raw)))

    def __bytes__(self) -> bytes:
        return self.pack()


def as_key_array(keys, key_len: int | None = None) -> np.ndarray:
    """Coerce keys (2-D array, bytes, FlowKeys) into a C-contiguous uint8 matrix."""
    if isinstance(keys, np.ndarray):
        if keys.ndim == 1:
            keys = keys.reshape(1, -1)
        arr = np.ascontiguousarray(keys, dtype=np.uint8)
    else:
        if isinstance(keys, (bytes, bytearray, FlowKey)):
            keys = [keys]
        rows = [bytes(k) for k in keys]
        if not rows:
            return np.zeros((0, key_len or FLOW_KEY_LEN), dtype=np.uint8)
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise ValueError("keys must all have the same length")
        arr = np.frombuffer(b"".join(rows), dtype=np.uint8).reshape(len(rows), width).copy()
    if key_len is not None and arr.shape[1] != key_len:
        raise ValueError(f"expected {key_len}-byte keys, got {arr.shape[1]}")
    return arr


def pack_flows(flows: Iterable[FlowKey] | Sequence[FlowKey]) -> np.ndarray:
    return as_key_array([f.pack() for f in flows], FLOW_KEY_LEN)


def flow_keys(src: np.ndarray, vip, sport: np.ndarray, dport: np.ndarray, proto=6) -> np.ndarray:
    """Vectorised construction of packed 13-byte flow keys."""
    n = len(src)
    out = np.empty((n, FLOW_KEY_LEN), dtype=np.uint8)
    src = np.asarray(src, dtype=np.uint32)
    vip = np.broadcast_to(np.asarray(vip, dtype=np.uint32), (n,))
    sport = np.broadcast_to(np.asarray(sport, dtype=np.uint16), (n,))
    dport = np.broadcast_to(np.asarray(dport, dtype=np.uint16), (n,))
    out[:, 0:4] = src.astype(">u4").view(np.uint8).reshape(n, 4)
    out[:, 4:8] = vip.astype(">u4").view(np.uint8).reshape(n, 4)
    out[:, 8:10] = sport.astype(">u2").view(np.uint8).reshape(n, 2)
    out[:, 10:12] = dport.astype(">u2").view(np.uint8).reshape(n, 2)
    out[:, 12] = proto
    return out


def key_vips(keys: np.ndarray) -> np.ndarray:
    """Destination VIP field (bytes 4..8, big-endian) of packed flow keys."""
    k = keys[:, 4:8].astype(np.uint32)
    return (k[:, 0] << 24) | (k[:, 1] << 16) | (k[:, 2] << 8) | k[:, 3]
