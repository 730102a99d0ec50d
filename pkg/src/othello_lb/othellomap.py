"""OthelloMap: one VIP's connection states in a dense record array plus an Othello.

The record array ``C`` holds ``(key, dip_index, dcode)`` rows at indices
``0..n-1``.  The Othello ``O`` maps each stored key to its row index, so a
query is one Othello lookup plus one full-key comparison.  Deletion moves the
last row into the hole and re-values only that row's key in ``O``.

Because ``O`` already holds an acyclic graph over the current keys, a data
plane structure (same graph, values = Dcodes) is regenerated with a single
value-assignment pass.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from numba import njit

from .hashing import FLOW_KEY_LEN, as_key_array, hash_row2
from .othello import (
    MIN_LOG2M,
    Othello,
    OthelloStructure,
    _add_edge,
    _log2m_for,
    _find_edge,
    _remove_edge,
    _set_edge_value,
)

__all__ = ["OthelloMap", "StateRecord", "cp_memory_bits", "index_width", "min_log2m"]

KEY_BITS = FLOW_KEY_LEN * 8
DIP_INDEX_BITS = 16
OTHELLO_BITS_PER_KEY = 2.33

_OK, _NEED_SPACE, _NEED_REHASH = 0, 1, 2
_RECORDS_MAGIC = b"OMAP"
_RECORDS_HEADER = struct.Struct("<4sIB")


def min_log2m(l_d: int) -> int:
    """Smallest array size for a map whose graph also serves as a data plane structure.

    An unknown key can only reach the m^2 XORs of array pairs, so a VIP with
    few states still needs m^2 well above 2^l_d (here 256 pairs per Dcode)
    for new connections to spread over every Dcode.
    """
    return max(MIN_LOG2M, (l_d + 1) // 2 + 4)


def index_width(capacity: int) -> int:
    """Value width of O: at least 8 bits and enough for every index below capacity."""
    return max(8, math.ceil(math.log2(max(capacity, 2))))


def cp_memory_bits(n: int, l_i: int, l_d: int, l_k: int = KEY_BITS + DIP_INDEX_BITS) -> float:
    """Control-plane accounting for one map: ``2.33*l_i*n + (l_k + l_d)*n`` bits."""
    return OTHELLO_BITS_PER_KEY * l_i * n + (l_k + l_d) * n


@dataclass(frozen=True)
class StateRecord:
    key: bytes
    dip_index: int
    dcode: int


# ---------------------------------------------------------------------------
# compiled kernels over (graph, record arrays)

@njit(cache=True, inline="always")
def _query_one(X, m, seed_a, seed_b, ckeys, n, key):
    mask = np.uint64(m - 1)
    h1, h2 = hash_row2(key, seed_a, seed_b)
    u = np.int64(h1 & mask)
    v = np.int64(h2 & mask)
    i = np.int64(X[u] ^ X[m + v])
    if i >= n:
        return -1
    for j in range(key.shape[0]):
        if ckeys[i, j] != key[j]:
            return -1
    return i


@njit(cache=True, nogil=True)
def _query_batch(g, seed_a, seed_b, ckeys, keys, out):
    X = g[0]
    m = g[1].shape[0] // 2
    n = g[11][0]
    for p in range(keys.shape[0]):
        out[p] = _query_one(X, m, seed_a, seed_b, ckeys, n, keys[p])


@njit(cache=True)
def _insert_batch(g, seed_a, seed_b, ckeys, cdips, cdcodes, limit, keys, dips, dcodes, start, status):
    X = g[0]
    m = g[1].shape[0] // 2
    cnt = g[11]
    for p in range(start, keys.shape[0]):
        n = cnt[0]
        i = _query_one(X, m, seed_a, seed_b, ckeys, n, keys[p])
        if i >= 0:
            cdips[i] = dips[p]
            cdcodes[i] = dcodes[p]
            status[p] = 1
            continue
        if n >= limit:
            return p, _NEED_SPACE
        if _add_edge(g, seed_a, seed_b, keys[p], n) < 0:
            return p, _NEED_REHASH
        ckeys[n, :] = keys[p]
        cdips[n] = dips[p]
        cdcodes[n] = dcodes[p]
        status[p] = 0
    return keys.shape[0], _OK


@njit(cache=True)
def _delete_batch(g, seed_a, seed_b, ckeys, cdips, cdcodes, keys, status):
    X = g[0]
    m = g[1].shape[0] // 2
    cnt = g[11]
    for p in range(keys.shape[0]):
        n = cnt[0]
        i = _query_one(X, m, seed_a, seed_b, ckeys, n, keys[p])
        if i < 0:
            status[p] = 0
            continue
        _remove_edge(g, _find_edge(g, seed_a, keys[p]))
        last = n - 1
        if i != last:
            ckeys[i, :] = ckeys[last]
            cdips[i] = cdips[last]
            cdcodes[i] = cdcodes[last]
            _set_edge_value(g, _find_edge(g, seed_a, ckeys[i]), i)
        status[p] = 1


# ---------------------------------------------------------------------------

class OthelloMap:
    """Dynamic key -> (dip_index, dcode) map for one VIP."""

    def __init__(self, key_len: int = FLOW_KEY_LEN, l_d: int = 12, capacity: int = 16, seed=None):
        self.key_len = key_len
        self.l_d = l_d
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self._alloc_records(max(capacity, 8))
        self.o = Othello(index_width(self._cap), key_len=key_len, log2m=min_log2m(l_d), seed=self.rng)

    def _alloc_records(self, cap: int) -> None:
        self._cap = cap
        self.keys = np.zeros((cap, self.key_len), dtype=np.uint8)
        self.dips = np.zeros(cap, dtype=np.uint16)
        self.dcodes = np.zeros(cap, dtype=np.uint16)

    @classmethod
    def from_records(cls, keys, dips, dcodes, l_d: int = 12, seed=None) -> OthelloMap:
        """Bulk construction from distinct keys (one static Othello build)."""
        keys = as_key_array(keys)
        n = keys.shape[0]
        obj = cls(key_len=keys.shape[1], l_d=l_d, capacity=max(16, 1 << max(n - 1, 1).bit_length()),
                  seed=seed)
        obj.keys[:n] = keys
        obj.dips[:n] = dips
        obj.dcodes[:n] = dcodes
        log2m = max(min_log2m(l_d), _log2m_for(n))
        obj.o = Othello.build(keys, np.arange(n, dtype=np.uint32), index_width(obj._cap), m=1 << log2m,
                              seed=obj.rng)
        if obj.o.key_len != obj.key_len:
            obj.o.key_len = obj.key_len
        return obj

    # -- basic views ---------------------------------------------------------

    def __len__(self) -> int:
        return int(self.o.cnt[0])

    @property
    def l_i(self) -> int:
        return self.o.width

    @property
    def capacity(self) -> int:
        return self._cap

    def records(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = len(self)
        return self.keys[:n], self.dips[:n], self.dcodes[:n]

    def _k(self, keys) -> np.ndarray:
        return as_key_array(keys, self.key_len)

    # -- query ---------------------------------------------------------------

    def index_batch(self, keys) -> np.ndarray:
        """Row index of each key, -1 where absent."""
        keys = self._k(keys)
        out = np.empty(keys.shape[0], dtype=np.int64)
        _query_batch(self.o.graph, np.uint64(self.o.seed_a), np.uint64(self.o.seed_b),
                     self.keys, keys, out)
        return out

    def query(self, key) -> StateRecord | None:
        i = int(self.index_batch(key)[0])
        if i < 0:
            return None
        return StateRecord(bytes(self.keys[i]), int(self.dips[i]), int(self.dcodes[i]))

    def __contains__(self, key) -> bool:
        return int(self.index_batch(key)[0]) >= 0

    # -- mutation ------------------------------------------------------------

    def insert(self, key, dip_index: int, dcode: int) -> bool:
        """Store or overwrite one state; returns True if an existing record was replaced."""
        return bool(self.insert_many(key, [dip_index], [dcode])[0])

    def insert_many(self, keys, dips, dcodes) -> np.ndarray:
        """Batch insert; the returned mask marks keys that replaced an existing record."""
        keys = self._k(keys)
        dips = np.asarray(dips, dtype=np.uint16).reshape(-1)
        dcodes = np.asarray(dcodes, dtype=np.uint16).reshape(-1)
        if not keys.shape[0] == dips.shape[0] == dcodes.shape[0]:
            raise ValueError("keys, dips and dcodes differ in length")
        if dcodes.size and int(dcodes.max()) >> self.l_d:
            raise ValueError(f"dcode does not fit in {self.l_d} bits")
        status = np.zeros(keys.shape[0], dtype=np.int8)
        pos = 0
        while True:
            o = self.o
            limit = min(self._cap, o.capacity)
            pos, st = _insert_batch(o.graph, np.uint64(o.seed_a), np.uint64(o.seed_b), self.keys,
                                    self.dips, self.dcodes, limit, keys, dips, dcodes, pos, status)
            if st == _OK:
                return status.astype(bool)
            if st == _NEED_SPACE:
                self._make_room()
            else:
                o.rehash()

    def _make_room(self) -> None:
        n = len(self)
        if n >= self._cap:
            old = self.keys, self.dips, self.dcodes
            self._alloc_records(self._cap * 2)
            self.keys[:n], self.dips[:n], self.dcodes[:n] = old[0][:n], old[1][:n], old[2][:n]
            width = index_width(self._cap)
            if width > self.o.width:
                self.o.set_width(width)
        if n + 1 > self.o.capacity:
            self.o.rehash(self.o.log2m + 1)

    def delete(self, key) -> bool:
        """Remove one state; returns False (and does nothing) if it was absent."""
        return bool(self.delete_many(key)[0])

    def delete_many(self, keys) -> np.ndarray:
        keys = self._k(keys)
        status = np.zeros(keys.shape[0], dtype=np.int8)
        o = self.o
        _delete_batch(o.graph, np.uint64(o.seed_a), np.uint64(o.seed_b), self.keys, self.dips,
                      self.dcodes, keys, status)
        return status.astype(bool)

    def set_dcodes(self, indices, dcodes) -> None:
        """Rewrite the Dcode of rows in place (the graph is untouched)."""
        dcodes = np.asarray(dcodes, dtype=np.uint16)
        if dcodes.size and int(dcodes.max()) >> self.l_d:
            raise ValueError(f"dcode does not fit in {self.l_d} bits")
        self.dcodes[np.asarray(indices, dtype=np.int64)] = dcodes

    # -- data plane ----------------------------------------------------------

    def generate_dataplane(self, l_d: int | None = None) -> OthelloStructure:
        """Lookup structure over O's graph and seeds whose values are the Dcodes."""
        l_d = self.l_d if l_d is None else l_d
        n = len(self)
        if n:
            per_edge = self.dcodes[np.minimum(self.o.ev, n - 1)].astype(np.uint32)
        else:
            per_edge = np.zeros_like(self.o.ev)
        return self.o.revalue(per_edge, l_d)

    def memory_bits(self) -> float:
        return cp_memory_bits(len(self), self.l_i, self.l_d)

    # -- snapshot ------------------------------------------------------------

    def to_bytes(self) -> bytes:
        keys, dips, dcodes = self.records()
        n = keys.shape[0]
        rec = np.zeros(n, dtype=[("key", np.uint8, (self.key_len,)), ("dip", "<u2"), ("dcode", "<u2")])
        rec["key"], rec["dip"], rec["dcode"] = keys, dips, dcodes
        return (self.o.to_bytes() + _RECORDS_HEADER.pack(_RECORDS_MAGIC, n, self.key_len)
                + rec.tobytes())

    @classmethod
    def from_bytes(cls, data: bytes, l_d: int = 12, seed=None) -> OthelloMap:
        structure, pos = OthelloStructure._parse(data)
        magic, n, key_len = _RECORDS_HEADER.unpack_from(data, pos)
        if magic != _RECORDS_MAGIC:
            raise ValueError("missing OthelloMap record section")
        pos += _RECORDS_HEADER.size
        dt = np.dtype([("key", np.uint8, (key_len,)), ("dip", "<u2"), ("dcode", "<u2")])
        rec = np.frombuffer(data, dtype=dt, count=n, offset=pos)
        obj = cls(key_len=key_len, l_d=l_d, capacity=max(16, 1 << max(n - 1, 1).bit_length()), seed=seed)
        obj.keys[:n], obj.dips[:n], obj.dcodes[:n] = rec["key"], rec["dip"], rec["dcode"]
        obj.o = Othello.restore(structure, np.ascontiguousarray(rec["key"]),
                                np.arange(n, dtype=np.uint32), seed=obj.rng)
        return obj
