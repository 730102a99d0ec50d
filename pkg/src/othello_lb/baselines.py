"""Competitor LB tables: cuckoo+digest, multi-level digest cascade, static hashing.

The digest tables keep only a fingerprint of each connection key plus its DIP
index.  A lookup that matches a fingerprint is trusted, so two keys with the
same fingerprint are indistinguishable: an absent key can get a false hit and
deleting one key's fingerprint can drop the other's state.

Operation counters follow the per-packet cost model used for the comparison:
a 64-bit digest costs two 32-bit hash computations, each probed bucket costs
one hash, four slot reads and four digest compares, plus one read of the
table header.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .hashing import _mix64, as_key_array, hash_keys, hash_row, hash_row2, hash_row3

__all__ = [
    "CuckooDigestTable",
    "MultiLevelDigestTable",
    "StaticHashLB",
    "TableFullError",
    "cuckoo_memory_bits",
]

SLOTS = 4
MAX_KICKS = 500
LOAD_TARGET = 0.9
SLOT_OVERHEAD = 1.1

MISS = -1
_H, _R, _C, _N = range(4)  # counter slots: hashes, reads, compares, lookups


class TableFullError(RuntimeError):
    pass


def cuckoo_memory_bits(n: int, vips: int, l_d: int = 12, l_v: int = 12, digest_bits: int = 64) -> float:
    """Accounting at 90% load: ``1.1*(64+l_v)*n + 2^l_d*l_v*M + 48*2^l_v`` bits.

    1.1 is the rounded slot overhead of a 0.9 load, kept as written so that
    the per-state term is 83.6 bits at l_v = 12.
    """
    return SLOT_OVERHEAD * (digest_bits + l_v) * n + (1 << l_d) * l_v * vips + 48 * (1 << l_v)


# ---------------------------------------------------------------------------
# compiled kernels

@njit(cache=True, inline="always")
def _fold(hi, lo, dmask):
    d = ((hi << np.uint64(32)) | lo) & dmask
    if d == 0:
        d = np.uint64(1)
    return d


@njit(cache=True, inline="always")
def _digest(key, s1, s2, dmask):
    hi, lo = hash_row2(key, s1, s2)
    return _fold(hi, lo, dmask)


@njit(cache=True, inline="always")
def _digest_and_bucket(key, seeds, s3, dmask, mask):
    """Digest (two hashes) and first bucket (one hash) in a single pass."""
    hi, lo, h = hash_row3(key, seeds[0], seeds[1], s3)
    return _fold(hi, lo, dmask), np.int64(h & mask)


@njit(cache=True, inline="always")
def _alt(b, d, mask):
    return b ^ np.int64(_mix64(d) & mask)


@njit(cache=True, inline="always")
def _probe(dig, b, d):
    for j in range(SLOTS):
        if dig[b, j] == d:
            return j
    return -1


@njit(cache=True, nogil=True)
def _cuckoo_lookup(dig, dip, seeds, dmask, keys, out, ctr):
    mask = np.uint64(dig.shape[0] - 1)
    h = 0
    r = 0
    c = 0
    for p in range(keys.shape[0]):
        key = keys[p]
        d, b1 = _digest_and_bucket(key, seeds, seeds[2], dmask, mask)
        h += 3
        r += 1 + SLOTS
        c += SLOTS
        j = _probe(dig, b1, d)
        if j >= 0:
            out[p] = dip[b1, j]
            continue
        b2 = _alt(b1, d, mask)
        h += 1
        r += SLOTS
        c += SLOTS
        j = _probe(dig, b2, d)
        out[p] = dip[b2, j] if j >= 0 else MISS
    ctr[_H] += h
    ctr[_R] += r
    ctr[_C] += c
    ctr[_N] += keys.shape[0]


@njit(cache=True, nogil=True)
def _cuckoo_lookup_fast(dig, dip, seeds, dmask, keys, out):
    mask = np.uint64(dig.shape[0] - 1)
    for p in range(keys.shape[0]):
        key = keys[p]
        d, b1 = _digest_and_bucket(key, seeds, seeds[2], dmask, mask)
        j = _probe(dig, b1, d)
        if j >= 0:
            out[p] = dip[b1, j]
            continue
        b2 = _alt(b1, d, mask)
        j = _probe(dig, b2, d)
        out[p] = dip[b2, j] if j >= 0 else MISS


@njit(cache=True)
def _free_slot(dig, b):
    for j in range(SLOTS):
        if dig[b, j] == 0:
            return j
    return -1


@njit(cache=True)
def _load(dig, b):
    n = 0
    for j in range(SLOTS):
        if dig[b, j] != 0:
            n += 1
    return n


@njit(cache=True)
def _cuckoo_insert(dig, dip, seeds, dmask, keys, dips, rand, path_b, path_j, status):
    """status per key: 0 new, 1 overwrote a matching digest, 2 table full (stops)."""
    mask = np.uint64(dig.shape[0] - 1)
    for p in range(keys.shape[0]):
        key = keys[p]
        d, b1 = _digest_and_bucket(key, seeds, seeds[2], dmask, mask)
        b2 = _alt(b1, d, mask)
        j = _probe(dig, b1, d)
        if j >= 0:
            dip[b1, j] = dips[p]
            status[p] = 1
            continue
        j = _probe(dig, b2, d)
        if j >= 0:
            dip[b2, j] = dips[p]
            status[p] = 1
            continue
        # the emptier bucket, coin flip on ties, so hits split evenly between buckets
        l1 = _load(dig, b1)
        l2 = _load(dig, b2)
        r = rand[p]
        first = b1 if (l1 < l2 or (l1 == l2 and (r & np.uint64(1)) == 0)) else b2
        j = _free_slot(dig, first)
        if j >= 0:
            dig[first, j] = d
            dip[first, j] = dips[p]
            status[p] = 0
            continue
        # eviction walk, undone on failure
        cd = d
        cv = dips[p]
        b = first
        steps = 0
        placed = False
        x = r
        while steps < MAX_KICKS:
            x ^= x << np.uint64(13)
            x ^= x >> np.uint64(7)
            x ^= x << np.uint64(17)
            j = np.int64(x % np.uint64(SLOTS))
            path_b[steps] = b
            path_j[steps] = j
            steps += 1
            vd = dig[b, j]
            vv = dip[b, j]
            dig[b, j] = cd
            dip[b, j] = cv
            cd = vd
            cv = vv
            b = _alt(b, cd, mask)
            j = _free_slot(dig, b)
            if j >= 0:
                dig[b, j] = cd
                dip[b, j] = cv
                placed = True
                break
        if not placed:
            for s in range(steps - 1, -1, -1):
                pb = path_b[s]
                pj = path_j[s]
                vd = dig[pb, pj]
                vv = dip[pb, pj]
                dig[pb, pj] = cd
                dip[pb, pj] = cv
                cd = vd
                cv = vv
            status[p] = 2
            return p
        status[p] = 0
    return keys.shape[0]


@njit(cache=True)
def _cuckoo_delete(dig, dip, seeds, dmask, keys, status):
    mask = np.uint64(dig.shape[0] - 1)
    for p in range(keys.shape[0]):
        key = keys[p]
        d, b1 = _digest_and_bucket(key, seeds, seeds[2], dmask, mask)
        j = _probe(dig, b1, d)
        if j >= 0:
            dig[b1, j] = 0
            status[p] = 1
            continue
        b2 = _alt(b1, d, mask)
        j = _probe(dig, b2, d)
        if j >= 0:
            dig[b2, j] = 0
            status[p] = 1
        else:
            status[p] = 0


@njit(cache=True, nogil=True)
def _ml_lookup(dig, dip, seeds, dmask, keys, out, ctr):
    levels = dig.shape[0]
    mask = np.uint64(dig.shape[1] - 1)
    h = 0
    r = 0
    c = 0
    for p in range(keys.shape[0]):
        key = keys[p]
        d, b0 = _digest_and_bucket(key, seeds, seeds[2], dmask, mask)
        h += 2
        r += 1
        res = MISS
        for lv in range(levels):
            b = b0 if lv == 0 else np.int64(hash_row(key, seeds[2 + lv]) & mask)
            h += 1
            r += SLOTS
            c += SLOTS
            found = False
            for j in range(SLOTS):
                if dig[lv, b, j] == d:
                    res = dip[lv, b, j]
                    found = True
                    break
            if found:
                break
        out[p] = res
    ctr[_H] += h
    ctr[_R] += r
    ctr[_C] += c
    ctr[_N] += keys.shape[0]


@njit(cache=True, nogil=True)
def _ml_lookup_fast(dig, dip, seeds, dmask, keys, out):
    levels = dig.shape[0]
    mask = np.uint64(dig.shape[1] - 1)
    for p in range(keys.shape[0]):
        key = keys[p]
        d, b0 = _digest_and_bucket(key, seeds, seeds[2], dmask, mask)
        res = MISS
        for lv in range(levels):
            b = b0 if lv == 0 else np.int64(hash_row(key, seeds[2 + lv]) & mask)
            found = False
            for j in range(SLOTS):
                if dig[lv, b, j] == d:
                    res = dip[lv, b, j]
                    found = True
                    break
            if found:
                break
        out[p] = res


@njit(cache=True)
def _ml_update(dig, dip, seeds, dmask, keys, dips, delete, status):
    """Insert (first level with room) or delete; status 0/1 as for cuckoo, 2 full."""
    levels = dig.shape[0]
    mask = np.uint64(dig.shape[1] - 1)
    for p in range(keys.shape[0]):
        key = keys[p]
        d = _digest(key, seeds[0], seeds[1], dmask)
        done = False
        for lv in range(levels):
            b = np.int64(hash_row(key, seeds[2 + lv]) & mask)
            for j in range(SLOTS):
                if dig[lv, b, j] == d:
                    if delete:
                        dig[lv, b, j] = 0
                    else:
                        dip[lv, b, j] = dips[p]
                    status[p] = 1
                    done = True
                    break
            if done:
                break
        if done or delete:
            if not done:
                status[p] = 0
            continue
        for lv in range(levels):
            b = np.int64(hash_row(key, seeds[2 + lv]) & mask)
            for j in range(SLOTS):
                if dig[lv, b, j] == 0:
                    dig[lv, b, j] = d
                    dip[lv, b, j] = dips[p]
                    done = True
                    break
            if done:
                break
        if not done:
            status[p] = 2
            return p
        status[p] = 0
    return keys.shape[0]


# ---------------------------------------------------------------------------

class _DigestTable:
    digest_bits: int
    slots: int

    def _init_common(self, digest_bits: int, seed) -> None:
        if digest_bits not in (16, 32, 64):
            raise ValueError("digest width must be 16, 32 or 64 bits")
        self.digest_bits = digest_bits
        self.dmask = np.uint64((1 << digest_bits) - 1)
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.counters = np.zeros(4, dtype=np.int64)
        self.n = 0

    def insert(self, key, dip: int) -> bool:
        """True when a stored digest was overwritten instead of a new slot taken."""
        return bool(self.insert_many(key, [dip])[0])

    def delete(self, key) -> bool:
        return bool(self.delete_many(key)[0])

    def lookup(self, key) -> int | None:
        r = int(self.lookup_batch(key)[0])
        return None if r == MISS else r

    def lookup_batch(self, keys, count: bool = True) -> np.ndarray:
        keys = as_key_array(keys)
        out = np.empty(keys.shape[0], dtype=np.int64)
        if count:
            self._lookup(keys, out)
        else:
            self._lookup_fast(keys, out)
        return out

    def cost(self) -> dict[str, float]:
        """Average hashes / reads / compares per counted lookup."""
        n = max(int(self.counters[_N]), 1)
        return {"hashes": self.counters[_H] / n, "reads": self.counters[_R] / n,
                "compares": self.counters[_C] / n}

    def reset_counters(self) -> None:
        self.counters[:] = 0

    @property
    def load(self) -> float:
        return self.n / self.slots

    def digest_of(self, key) -> int:
        """Stored fingerprint of a key (for engineering collisions in tests)."""
        k = as_key_array(key)[0]
        return int(_digest(k, self.seeds[0], self.seeds[1], self.dmask))

    def bucket_of(self, key) -> int:
        """First bucket probed for a key (level 0 for the cascade)."""
        k = as_key_array(key)[0]
        mask = np.uint64(self.dig.shape[-2] - 1)
        return int(_digest_and_bucket(k, self.seeds, self.seeds[2], self.dmask, mask)[1])


class CuckooDigestTable(_DigestTable):
    """(2,4) cuckoo table of key digests and DIP indices.

    The second bucket is derived from the first and the digest, so entries can
    be moved during eviction without the full key.
    """

    def __init__(self, capacity: int, digest_bits: int = 64, load: float = LOAD_TARGET, seed=None):
        self._init_common(digest_bits, seed)
        buckets = 1 << max(1, math.ceil(math.log2(max(capacity / (load * SLOTS), 2))))
        self.dig = np.zeros((buckets, SLOTS), dtype=np.uint64)
        self.dip = np.zeros((buckets, SLOTS), dtype=np.uint16)
        self.seeds = self.rng.integers(0, 1 << 32, size=3, dtype=np.uint64)
        self._path_b = np.zeros(MAX_KICKS, dtype=np.int64)
        self._path_j = np.zeros(MAX_KICKS, dtype=np.int64)

    @property
    def buckets(self) -> int:
        return self.dig.shape[0]

    @property
    def slots(self) -> int:
        return self.dig.size

    def insert_many(self, keys, dips) -> np.ndarray:
        keys = as_key_array(keys)
        dips = np.asarray(dips, dtype=np.uint16).reshape(-1)
        status = np.zeros(keys.shape[0], dtype=np.int8)
        rand = self.rng.integers(1, 1 << 63, size=keys.shape[0], dtype=np.uint64)
        stop = _cuckoo_insert(self.dig, self.dip, self.seeds, self.dmask, keys, dips, rand,
                              self._path_b, self._path_j, status)
        self.n += int((status[:stop] == 0).sum())
        if stop < keys.shape[0]:
            raise TableFullError(f"eviction chain exceeded {MAX_KICKS} kicks after {self.n} entries")
        return status == 1

    def delete_many(self, keys) -> np.ndarray:
        keys = as_key_array(keys)
        status = np.zeros(keys.shape[0], dtype=np.int8)
        _cuckoo_delete(self.dig, self.dip, self.seeds, self.dmask, keys, status)
        self.n -= int(status.sum())
        return status.astype(bool)

    def _lookup(self, keys, out) -> None:
        _cuckoo_lookup(self.dig, self.dip, self.seeds, self.dmask, keys, out, self.counters)

    def _lookup_fast(self, keys, out) -> None:
        _cuckoo_lookup_fast(self.dig, self.dip, self.seeds, self.dmask, keys, out)

    def memory_bits(self, vips: int = 1, l_d: int = 12, l_v: int = 12) -> float:
        return cuckoo_memory_bits(self.n, vips, l_d, l_v, self.digest_bits)

    def measured_bits(self, l_v: int = 12) -> int:
        return self.slots * (self.digest_bits + l_v)


class MultiLevelDigestTable(_DigestTable):
    """Cascade of equal-size 4-slot bucket tables; the first match wins."""

    def __init__(self, capacity: int, levels: int = 4, digest_bits: int = 64, load: float = LOAD_TARGET,
                 seed=None):
        self._init_common(digest_bits, seed)
        per_level = capacity / (load * SLOTS * levels)
        buckets = 1 << max(1, math.ceil(math.log2(max(per_level, 2))))
        self.dig = np.zeros((levels, buckets, SLOTS), dtype=np.uint64)
        self.dip = np.zeros((levels, buckets, SLOTS), dtype=np.uint16)
        self.seeds = self.rng.integers(0, 1 << 32, size=2 + levels, dtype=np.uint64)

    @property
    def levels(self) -> int:
        return self.dig.shape[0]

    @property
    def slots(self) -> int:
        return self.dig.size

    def insert_many(self, keys, dips) -> np.ndarray:
        keys = as_key_array(keys)
        dips = np.asarray(dips, dtype=np.uint16).reshape(-1)
        status = np.zeros(keys.shape[0], dtype=np.int8)
        stop = _ml_update(self.dig, self.dip, self.seeds, self.dmask, keys, dips, False, status)
        self.n += int((status[:stop] == 0).sum())
        if stop < keys.shape[0]:
            raise TableFullError(f"all {self.levels} levels full after {self.n} entries")
        return status == 1

    def delete_many(self, keys) -> np.ndarray:
        keys = as_key_array(keys)
        status = np.zeros(keys.shape[0], dtype=np.int8)
        _ml_update(self.dig, self.dip, self.seeds, self.dmask, keys, np.zeros(0, np.uint16), True, status)
        self.n -= int(status.sum())
        return status.astype(bool)

    def _lookup(self, keys, out) -> None:
        _ml_lookup(self.dig, self.dip, self.seeds, self.dmask, keys, out, self.counters)

    def _lookup_fast(self, keys, out) -> None:
        _ml_lookup_fast(self.dig, self.dip, self.seeds, self.dmask, keys, out)

    def memory_bits(self, vips: int = 1, l_d: int = 12, l_v: int = 12) -> float:
        return cuckoo_memory_bits(self.n, vips, l_d, l_v, self.digest_bits)

    def measured_bits(self, l_v: int = 12) -> int:
        return self.slots * (self.digest_bits + l_v)


class StaticHashLB:
    """Stateless LB: a key's DIP is a pure function of its hash and the pool size.

    ``mode="range"`` splits the normalized hash range [0, 1) into t equal
    slices (hash 0.3 with t=4 lands in slice 1); ``mode="mod"`` uses
    ``hash mod t``.  Either way, changing t silently moves live connections.
    """

    def __init__(self, t: int, mode: str = "range", seed: int = 0):
        if t < 1:
            raise ValueError("pool size must be at least 1")
        if mode not in ("range", "mod"):
            raise ValueError("mode must be 'range' or 'mod'")
        self.t = t
        self.mode = mode
        self.seed = seed & 0xFFFFFFFF

    def index_of_hash(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=np.uint64)
        if self.mode == "range":
            return ((h * np.uint64(self.t)) >> np.uint64(32)).astype(np.int64)
        return (h % np.uint64(self.t)).astype(np.int64)

    def index_of_normalized(self, x: float) -> int:
        """DIP index for a hash value given as a fraction of the hash range."""
        return int(self.index_of_hash(int(x * (1 << 32))))

    def lookup_batch(self, keys) -> np.ndarray:
        return self.index_of_hash(hash_keys(keys, self.seed))

    def lookup(self, key) -> int:
        return int(self.lookup_batch(key)[0])

    def resize(self, t: int) -> None:
        if t < 1:
            raise ValueError("pool size must be at least 1")
        self.t = t
