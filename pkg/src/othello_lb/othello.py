"""Othello hashing: a two-array XOR lookup built over an acyclic bipartite graph.

Every key ``k`` becomes an edge between vertex ``u = h_a(k)`` of array A and
vertex ``v = h_b(k)`` of array B.  As long as the graph stays a forest, values
can be assigned so that ``A[u] ^ B[v]`` equals the key's value for every
edge.  Vertices untouched by any edge keep uniformly random contents, which
is what makes lookups of unknown keys behave like a uniform randomizer.

The control-plane object :class:`Othello` owns the graph and supports
incremental add / remove / set_value.  :class:`OthelloStructure` is the
graph-free lookup snapshot handed to a data plane.

Vertex numbering used by the compiled kernels: A-side vertex ``u`` is ``u``,
B-side vertex ``v`` is ``m + v``; the value array ``X`` is ``A`` followed by
``B``.  Edge ``e`` owns half-edges ``2e`` (at its A vertex) and ``2e + 1``
(at its B vertex), chained into per-vertex doubly linked lists.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numba import njit

from .bitpack import pack_bits, packed_size, unpack_bits
from .hashing import as_key_array, hash_keys, hash_row, hash_row2

__all__ = [
    "MAX_LOAD",
    "MAX_RETRIES",
    "ConstructionError",
    "DuplicateKeyError",
    "Othello",
    "OthelloStructure",
    "build",
    "lookup",
]

MAX_LOAD = 0.75
MAX_RETRIES = 100
MIN_LOG2M = 3
MAX_WIDTH = 32

_MAGIC = b"OTHL"
_VERSION = 1
_HEADER = struct.Struct("<4sBBBBII")


class ConstructionError(RuntimeError):
    """No acyclic placement found within the retry cap."""


class DuplicateKeyError(KeyError):
    pass


def _capacity(log2m: int) -> int:
    return int((1 << log2m) * MAX_LOAD)


def _log2m_for(n: int) -> int:
    log2m = MIN_LOG2M
    while n > _capacity(log2m):
        log2m += 1
    return log2m


# ---------------------------------------------------------------------------
# compiled graph kernels

@njit(cache=True, inline="always")
def _link(head, hv, nxt, prv, h, x):
    hv[h] = x
    first = head[x]
    nxt[h] = first
    prv[h] = -1
    if first != -1:
        prv[first] = h
    head[x] = h


@njit(cache=True, inline="always")
def _unlink(head, hv, nxt, prv, h):
    p = prv[h]
    q = nxt[h]
    if p != -1:
        nxt[p] = q
    else:
        head[hv[h]] = q
    if q != -1:
        prv[q] = p


@njit(cache=True)
def _collect(s, target, skip_e, head, hv, nxt, mark, epoch, stack):
    """Gather the tree holding ``s`` (not crossing edge ``skip_e``) into ``stack``.

    Returns the vertex count, or -1 as soon as ``target`` is reached.
    """
    mark[s] = epoch
    stack[0] = s
    cnt = 1
    i = 0
    while i < cnt:
        x = stack[i]
        i += 1
        h = head[x]
        while h != -1:
            if (h >> 1) != skip_e:
                y = hv[h ^ 1]
                if mark[y] != epoch:
                    if y == target:
                        return -1
                    mark[y] = epoch
                    stack[cnt] = y
                    cnt += 1
            h = nxt[h]
    return cnt


@njit(cache=True)
def _find_edge(g, seed_a, key):
    X, head, hv, nxt, prv, ev, ekeys, alive, free, mark, stack, cnt = g
    m = head.shape[0] // 2
    u = np.int64(hash_row(key, seed_a) & np.uint64(m - 1))
    h = head[u]
    klen = key.shape[0]
    while h != -1:
        e = h >> 1
        same = True
        for j in range(klen):
            if ekeys[e, j] != key[j]:
                same = False
                break
        if same:
            return e
        h = nxt[h]
    return -1


@njit(cache=True)
def _add_edge(g, seed_a, seed_b, key, value):
    """Insert one edge; returns its id, or -1 when it would close a cycle."""
    X, head, hv, nxt, prv, ev, ekeys, alive, free, mark, stack, cnt = g
    m = head.shape[0] // 2
    mask = np.uint64(m - 1)
    u = np.int64(hash_row(key, seed_a) & mask)
    v = m + np.int64(hash_row(key, seed_b) & mask)
    value = np.uint32(value)
    if head[u] == -1 and head[v] == -1:
        X[v] = X[u] ^ value
    elif head[u] == -1:
        X[u] = X[v] ^ value
    elif head[v] == -1:
        X[v] = X[u] ^ value
    else:
        cnt[2] += 1
        c = _collect(v, u, -1, head, hv, nxt, mark, cnt[2], stack)
        if c < 0:
            return -1
        delta = X[u] ^ X[v] ^ value
        if delta != 0:
            for i in range(c):
                X[stack[i]] ^= delta
    cnt[1] -= 1
    e = free[cnt[1]]
    _link(head, hv, nxt, prv, 2 * e, u)
    _link(head, hv, nxt, prv, 2 * e + 1, v)
    ev[e] = value
    ekeys[e, :] = key
    alive[e] = 1
    cnt[0] += 1
    return e


@njit(cache=True)
def _remove_edge(g, e):
    X, head, hv, nxt, prv, ev, ekeys, alive, free, mark, stack, cnt = g
    _unlink(head, hv, nxt, prv, 2 * e)
    _unlink(head, hv, nxt, prv, 2 * e + 1)
    alive[e] = 0
    free[cnt[1]] = e
    cnt[1] += 1
    cnt[0] -= 1


@njit(cache=True)
def _set_edge_value(g, e, value):
    """Re-value edge ``e`` by XOR-flipping the subtree on its B side."""
    X, head, hv, nxt, prv, ev, ekeys, alive, free, mark, stack, cnt = g
    value = np.uint32(value)
    delta = ev[e] ^ value
    ev[e] = value
    if delta == 0:
        return
    cnt[2] += 1
    c = _collect(hv[2 * e + 1], -1, e, head, hv, nxt, mark, cnt[2], stack)
    for i in range(c):
        X[stack[i]] ^= delta


@njit(cache=True)
def _is_forest(ua, vb, m):
    """Union-find acyclicity check over edges (ua[i], m + vb[i])."""
    parent = np.arange(2 * m, dtype=np.int32)
    for i in range(ua.shape[0]):
        x = np.int64(ua[i])
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        y = m + np.int64(vb[i])
        while parent[y] != y:
            parent[y] = parent[parent[y]]
            y = parent[y]
        if x == y:
            return False
        parent[x] = y
    return True


@njit(cache=True)
def _link_all(g, ua, vb, values, keys):
    X, head, hv, nxt, prv, ev, ekeys, alive, free, mark, stack, cnt = g
    m = head.shape[0] // 2
    n = ua.shape[0]
    for e in range(n):
        _link(head, hv, nxt, prv, 2 * e, np.int64(ua[e]))
        _link(head, hv, nxt, prv, 2 * e + 1, m + np.int64(vb[e]))
        ev[e] = values[e]
        ekeys[e, :] = keys[e]
        alive[e] = 1
    cap = ev.shape[0]
    top = 0
    for e in range(cap - 1, n - 1, -1):
        free[top] = e
        top += 1
    cnt[0] = n
    cnt[1] = top


@njit(cache=True)
def _assign(head, hv, nxt, values, X, mark, epoch, stack):
    """Fix every tree: its root keeps its random value, XOR propagates outward."""
    for s in range(head.shape[0]):
        if head[s] == -1 or mark[s] == epoch:
            continue
        mark[s] = epoch
        stack[0] = s
        cnt = 1
        i = 0
        while i < cnt:
            x = stack[i]
            i += 1
            h = head[x]
            while h != -1:
                y = hv[h ^ 1]
                if mark[y] != epoch:
                    X[y] = X[x] ^ values[h >> 1]
                    mark[y] = epoch
                    stack[cnt] = y
                    cnt += 1
                h = nxt[h]


@njit(cache=True, nogil=True)
def _lookup_batch(X, m, seed_a, seed_b, keys, out):
    mask = np.uint64(m - 1)
    for i in range(keys.shape[0]):
        h1, h2 = hash_row2(keys[i], seed_a, seed_b)
        out[i] = X[np.int64(h1 & mask)] ^ X[m + np.int64(h2 & mask)]


# ---------------------------------------------------------------------------

def _random_values(rng: np.random.Generator, count: int, width: int) -> np.ndarray:
    return rng.integers(0, 1 << width, size=count, dtype=np.uint64).astype(np.uint32)


@dataclass
class OthelloStructure:
    """Graph-free lookup snapshot: two l-bit arrays plus the hash seeds."""

    a: np.ndarray
    b: np.ndarray
    width: int
    seed_a: int
    seed_b: int

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def log2m(self) -> int:
        return self.m.bit_length() - 1

    def lookup(self, key) -> int:
        return int(self.lookup_batch(as_key_array(key))[0])

    def lookup_batch(self, keys) -> np.ndarray:
        keys = as_key_array(keys)
        x = np.concatenate([self.a, self.b])
        out = np.empty(keys.shape[0], dtype=np.uint32)
        _lookup_batch(x, self.m, np.uint64(self.seed_a), np.uint64(self.seed_b), keys, out)
        return out

    def payload_bits(self) -> int:
        return (self.a.shape[0] + self.b.shape[0]) * self.width

    def packed_a(self) -> bytes:
        return pack_bits(self.a, self.width)

    def packed_b(self) -> bytes:
        return pack_bits(self.b, self.width)

    def to_bytes(self) -> bytes:
        log2ma = self.a.shape[0].bit_length() - 1
        log2mb = self.b.shape[0].bit_length() - 1
        head = _HEADER.pack(_MAGIC, _VERSION, self.width, log2ma, log2mb, self.seed_a, self.seed_b)
        return head + self.packed_a() + self.packed_b()

    @classmethod
    def from_bytes(cls, data: bytes) -> OthelloStructure:
        obj, _ = cls._parse(data)
        return obj

    @classmethod
    def _parse(cls, data: bytes) -> tuple[OthelloStructure, int]:
        if len(data) < _HEADER.size:
            raise ValueError("truncated Othello header")
        magic, version, width, log2ma, log2mb, seed_a, seed_b = _HEADER.unpack_from(data)
        if magic != _MAGIC or version != _VERSION:
            raise ValueError("not a serialized Othello structure")
        ma, mb = 1 << log2ma, 1 << log2mb
        pos = _HEADER.size
        size_a, size_b = packed_size(ma, width), packed_size(mb, width)
        if len(data) < pos + size_a + size_b:
            raise ValueError("truncated Othello payload")
        a = unpack_bits(data[pos:pos + size_a], ma, width)
        pos += size_a
        b = unpack_bits(data[pos:pos + size_b], mb, width)
        pos += size_b
        return cls(a, b, width, seed_a, seed_b), pos


def lookup(o, key) -> int:
    """``A[h_a(key)] ^ B[h_b(key)]`` for an :class:`Othello` or a snapshot."""
    return o.lookup(key)


class Othello:
    """Dynamic Othello with its bipartite graph (control-plane side).

    ``rebuilds`` counts every time fresh hash seeds had to be drawn after the
    initial placement attempt, including retries inside a rebuild.
    """

    def __init__(self, width: int, key_len: int = 8, log2m: int = MIN_LOG2M, seed=None):
        if not 1 <= width <= MAX_WIDTH:
            raise ValueError(f"value width must be in 1..{MAX_WIDTH}")
        self.width = width
        self.key_len = key_len
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.rebuilds = 0
        self._alloc(max(log2m, MIN_LOG2M))
        self._draw_seeds()
        self.x[:] = _random_values(self.rng, self.x.shape[0], width)

    # -- storage -------------------------------------------------------------

    def _alloc(self, log2m: int) -> None:
        m = 1 << log2m
        cap = _capacity(log2m)
        self.log2m = log2m
        self.x = np.zeros(2 * m, dtype=np.uint32)
        self.head = np.full(2 * m, -1, dtype=np.int32)
        self.hv = np.zeros(2 * cap, dtype=np.int32)
        self.nxt = np.zeros(2 * cap, dtype=np.int32)
        self.prv = np.zeros(2 * cap, dtype=np.int32)
        self.ev = np.zeros(cap, dtype=np.uint32)
        self.ekeys = np.zeros((cap, self.key_len), dtype=np.uint8)
        self.alive = np.zeros(cap, dtype=np.uint8)
        self.free = np.arange(cap - 1, -1, -1, dtype=np.int32)
        self.mark = np.zeros(2 * m, dtype=np.int64)
        self.stack = np.zeros(2 * m, dtype=np.int32)
        self.cnt = np.array([0, cap, 0], dtype=np.int64)

    def _draw_seeds(self) -> None:
        sa, sb = self.rng.integers(0, 1 << 32, size=2, dtype=np.uint64)
        self.seed_a, self.seed_b = int(sa), int(sb)

    @property
    def graph(self) -> tuple:
        return (self.x, self.head, self.hv, self.nxt, self.prv, self.ev, self.ekeys,
                self.alive, self.free, self.mark, self.stack, self.cnt)

    @property
    def m(self) -> int:
        return 1 << self.log2m

    @property
    def capacity(self) -> int:
        return _capacity(self.log2m)

    @property
    def a(self) -> np.ndarray:
        return self.x[: self.m]

    @property
    def b(self) -> np.ndarray:
        return self.x[self.m:]

    def __len__(self) -> int:
        return int(self.cnt[0])

    def __contains__(self, key) -> bool:
        return self._find(self._key(key)) >= 0

    def _key(self, key) -> np.ndarray:
        return as_key_array(key, self.key_len)[0]

    def _check_value(self, value: int) -> int:
        value = int(value)
        if value < 0 or value >> self.width:
            raise ValueError(f"value {value} does not fit in {self.width} bits")
        return value

    def _find(self, k: np.ndarray) -> int:
        return int(_find_edge(self.graph, np.uint64(self.seed_a), k))

    # -- construction --------------------------------------------------------

    @classmethod
    def build(cls, keys, values, width: int, m: int | None = None, seed=None,
              max_retries: int = MAX_RETRIES) -> Othello:
        """Construct over ``(keys[i], values[i])``; ``m`` must be a power of two."""
        keys = as_key_array(keys)
        values = np.asarray(values, dtype=np.uint64)
        if values.shape[0] != keys.shape[0]:
            raise ValueError("keys and values differ in length")
        if m is None:
            log2m = _log2m_for(keys.shape[0])
        else:
            if m <= 0 or m & (m - 1):
                raise ValueError("m must be a power of two")
            log2m = max(m.bit_length() - 1, MIN_LOG2M)
            if keys.shape[0] > _capacity(log2m):
                raise ValueError(f"{keys.shape[0]} keys exceed the {MAX_LOAD} load bound of m={m}")
        obj = cls.__new__(cls)
        obj.width = width
        obj.key_len = keys.shape[1] if keys.shape[0] else 8
        obj.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        obj.rebuilds = 0
        if values.size and int(values.max()) >> width:
            raise ValueError(f"value does not fit in {width} bits")
        obj._place(keys, values.astype(np.uint32), log2m, max_retries, count_first=False)
        return obj

    def _place(self, keys, values, log2m, max_retries=MAX_RETRIES, count_first=True) -> None:
        m = 1 << log2m
        for attempt in range(max_retries + 1):
            if attempt or count_first:
                self.rebuilds += 1
            self._draw_seeds()
            ua = hash_keys(keys, self.seed_a) & np.uint32(m - 1)
            vb = hash_keys(keys, self.seed_b) & np.uint32(m - 1)
            if _is_forest(ua, vb, m):
                break
        else:
            raise ConstructionError(
                f"no acyclic placement for {keys.shape[0]} keys after {max_retries} retries "
                "(duplicate keys?)")
        self._alloc(log2m)
        _link_all(self.graph, ua, vb, values, keys)
        self.x[:] = _random_values(self.rng, 2 * m, self.width)
        self.cnt[2] += 1
        _assign(self.head, self.hv, self.nxt, self.ev, self.x, self.mark, self.cnt[2], self.stack)

    @classmethod
    def restore(cls, structure: OthelloStructure, keys, values, seed=None) -> Othello:
        """Re-attach a graph to a deserialized structure (same seeds and arrays)."""
        keys = as_key_array(keys)
        obj = cls.__new__(cls)
        obj.width = structure.width
        obj.key_len = keys.shape[1]
        obj.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        obj.rebuilds = 0
        obj.seed_a, obj.seed_b = structure.seed_a, structure.seed_b
        m = structure.m
        ua = hash_keys(keys, obj.seed_a) & np.uint32(m - 1)
        vb = hash_keys(keys, obj.seed_b) & np.uint32(m - 1)
        if not _is_forest(ua, vb, m):
            raise ConstructionError("serialized seeds do not give an acyclic graph for these keys")
        obj._alloc(structure.log2m)
        _link_all(obj.graph, ua, vb, np.asarray(values, dtype=np.uint32), keys)
        obj.x[:m] = structure.a
        obj.x[m:] = structure.b
        return obj

    def items(self) -> tuple[np.ndarray, np.ndarray]:
        """Keys and values of all stored edges (edge-id order)."""
        live = np.flatnonzero(self.alive)
        return self.ekeys[live].copy(), self.ev[live].copy()

    def rehash(self, log2m: int | None = None, extra=None) -> None:
        """Rebuild from scratch with new seeds, optionally resizing / adding one pair."""
        keys, values = self.items()
        if extra is not None:
            keys = np.vstack([keys, extra[0][None, :]])
            values = np.append(values, np.uint32(extra[1]))
        self._place(keys, values, self.log2m if log2m is None else log2m)

    def set_width(self, width: int) -> None:
        """Change the value width; free elements are re-randomised, no re-hash."""
        if not 1 <= width <= MAX_WIDTH:
            raise ValueError(f"value width must be in 1..{MAX_WIDTH}")
        if width < self.width and self.ev[self.alive.astype(bool)].max(initial=0) >> width:
            raise ValueError("stored values do not fit the narrower width")
        self.width = width
        self.x[:] = _random_values(self.rng, self.x.shape[0], width)
        self.cnt[2] += 1
        _assign(self.head, self.hv, self.nxt, self.ev, self.x, self.mark, self.cnt[2], self.stack)

    # -- queries -------------------------------------------------------------

    def lookup(self, key) -> int:
        return int(self.lookup_batch(as_key_array(key, self.key_len))[0])

    def lookup_batch(self, keys) -> np.ndarray:
        keys = as_key_array(keys, self.key_len)
        out = np.empty(keys.shape[0], dtype=np.uint32)
        _lookup_batch(self.x, self.m, np.uint64(self.seed_a), np.uint64(self.seed_b), keys, out)
        return out

    def structure(self) -> OthelloStructure:
        return OthelloStructure(self.a.copy(), self.b.copy(), self.width, self.seed_a, self.seed_b)

    def revalue(self, values_per_edge: np.ndarray, width: int) -> OthelloStructure:
        """Snapshot over the same graph and seeds with different per-edge values.

        One pass of value assignment: no hashing, no cycle risk.
        """
        x = _random_values(self.rng, 2 * self.m, width)
        mark = np.zeros(2 * self.m, dtype=np.int64)
        _assign(self.head, self.hv, self.nxt, np.asarray(values_per_edge, dtype=np.uint32),
                x, mark, 1, self.stack)
        return OthelloStructure(x[: self.m], x[self.m:], width, self.seed_a, self.seed_b)

    # -- mutation ------------------------------------------------------------

    def add(self, key, value) -> bool:
        """Insert a new key; returns True when the structure had to be rebuilt."""
        k = self._key(key)
        value = self._check_value(value)
        if self._find(k) >= 0:
            raise DuplicateKeyError(bytes(k))
        if len(self) + 1 > self.capacity:
            self.rehash(self.log2m + 1, extra=(k, value))
            return True
        e = _add_edge(self.graph, np.uint64(self.seed_a), np.uint64(self.seed_b), k, value)
        if e < 0:
            self.rehash(extra=(k, value))
            return True
        return False

    def remove(self, key) -> None:
        k = self._key(key)
        e = self._find(k)
        if e < 0:
            raise KeyError(bytes(k))
        _remove_edge(self.graph, e)

    def set_value(self, key, value) -> None:
        k = self._key(key)
        value = self._check_value(value)
        e = self._find(k)
        if e < 0:
            raise KeyError(bytes(k))
        _set_edge_value(self.graph, e, value)

    def payload_bits(self) -> int:
        return 2 * self.m * self.width

    def to_bytes(self) -> bytes:
        return self.structure().to_bytes()


def build(pairs, width: int, m: int | None = None, seed=None) -> Othello:
    """Build from an iterable of ``(key, value)`` pairs."""
    pairs = list(pairs)
    keys = as_key_array([k for k, _ in pairs]) if pairs else np.zeros((0, 8), dtype=np.uint8)
    return Othello.build(keys, [v for _, v in pairs], width, m=m, seed=seed)
