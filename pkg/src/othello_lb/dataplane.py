"""Packet-facing lookup pipeline and in-place update application.

A packet's VIP index is the low 8 bits of its destination VIP.  The VIP's
bit-packed Othello arrays give a Dcode, the VIP's DipArray row maps the Dcode
to a global DIP index, and the DIP table gives the 48-bit (address, port).

Concurrency contract (one writer, many readers):

* Array bytes live in one arena split into 1024-bit (128-byte) blocks, each
  guarded by a sequence counter.  The writer bumps a block's counter to odd,
  copies the block, then bumps it to even.  A reader snapshots the counters
  of the blocks it touches, reads, and retries if any counter was odd or
  moved.  The DipArray uses the same scheme over its own byte view.
* Per-VIP sizing metadata (m, seeds, offsets) has its own sequence counter.
  When an update changes m or the seeds the writer fills a fresh region and
  then swaps the metadata; readers retry only across that short swap.
* An in-place update touches many blocks one after another, and a new A
  block XORed with an old B block is garbage (free elements are re-drawn on
  every regeneration).  So the writer raises the VIP's UPDATING flag for the
  whole copy and readers of that VIP wait it out; readers of other VIPs never
  wait.  Lookups that had to wait are counted in ``races``.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass

import numpy as np
from numba import njit

from .bitpack import packed_size, read_packed, unpack_bits
from .hashing import as_key_array, hash_row2
from .othello import OthelloStructure

__all__ = [
    "BLOCK_BYTES",
    "DataPlane",
    "LOOKUP_COST",
    "UpdateMessage",
    "dp_memory_bits",
    "pack_update",
]

BLOCK_BYTES = 128
_BLOCK_SHIFT = 7
_PAD = 3
OTHELLO_BITS_PER_KEY = 2.33
DIP_ENTRY_BITS = 48
VIP_SLOT_BITS = 64

# per-packet cost of the lookup pipeline: hashes, memory reads, XORs
LOOKUP_COST = {"hashes": 2, "reads": 6, "xors": 1}

DROP = -1
_RETRY = -2
_NO_VIDX = np.zeros(0, dtype=np.int64)

# meta columns
_ACTIVE, _LOG2M, _SEED_A, _SEED_B, _OFF_A, _OFF_B, _UPDATING = range(7)
_META_COLS = 7


def dp_memory_bits(n: int, vips: int, l_d: int = 12, l_v: int = 12) -> float:
    """Accounting: ``2.33*l_d*n + 64*M + 2^l_d*l_v*M + 48*2^l_v`` bits."""
    return (OTHELLO_BITS_PER_KEY * l_d * n + VIP_SLOT_BITS * vips + (1 << l_d) * l_v * vips
            + DIP_ENTRY_BITS * (1 << l_v))


# ---------------------------------------------------------------------------
# update message

_MSG_MAGIC = b"CNCU"
_MSG_VERSION = 1
_MSG_HEADER = struct.Struct("<4sBBBBII")


@dataclass
class UpdateMessage:
    """<vip index, A', B', DA'> as pushed from control plane to data plane."""

    vip_index: int
    l_d: int
    log2m: int
    seed_a: int
    seed_b: int
    a: bytes
    b: bytes
    da: np.ndarray

    @classmethod
    def from_structure(cls, vip_index: int, structure: OthelloStructure, da) -> UpdateMessage:
        return cls(vip_index, structure.width, structure.log2m, structure.seed_a, structure.seed_b,
                   structure.packed_a(), structure.packed_b(), np.asarray(da, dtype=np.uint16))

    @property
    def m(self) -> int:
        return 1 << self.log2m

    def validate(self) -> None:
        if not 0 <= self.vip_index <= 255:
            raise ValueError("vip index out of range")
        if not 1 <= self.l_d <= 16:
            raise ValueError("l_d must be in 1..16")
        size = packed_size(self.m, self.l_d)
        if len(self.a) != size or len(self.b) != size:
            raise ValueError("A'/B' sizes disagree with the declared m and l_d")
        if self.da.shape != (1 << self.l_d,):
            raise ValueError("DA' must hold 2^l_d entries")

    def structure(self) -> OthelloStructure:
        return OthelloStructure(unpack_bits(self.a, self.m, self.l_d), unpack_bits(self.b, self.m, self.l_d),
                                self.l_d, self.seed_a, self.seed_b)

    def to_bytes(self) -> bytes:
        self.validate()
        head = _MSG_HEADER.pack(_MSG_MAGIC, _MSG_VERSION, self.vip_index, self.l_d, self.log2m,
                                self.seed_a, self.seed_b)
        return head + self.a + self.b + self.da.astype("<u2").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> UpdateMessage:
        if len(data) < _MSG_HEADER.size:
            raise ValueError("truncated update header")
        magic, version, vip, l_d, log2m, sa, sb = _MSG_HEADER.unpack_from(data)
        if magic != _MSG_MAGIC or version != _MSG_VERSION:
            raise ValueError("not an update message")
        size = packed_size(1 << log2m, l_d)
        pos = _MSG_HEADER.size
        end = pos + 2 * size + 2 * (1 << l_d)
        if len(data) != end:
            raise ValueError("update message length disagrees with its header")
        a = bytes(data[pos:pos + size])
        b = bytes(data[pos + size:pos + 2 * size])
        da = np.frombuffer(data, dtype="<u2", count=1 << l_d, offset=pos + 2 * size).astype(np.uint16)
        msg = cls(vip, l_d, log2m, sa, sb, a, b, da)
        msg.validate()
        return msg


# ---------------------------------------------------------------------------
# compiled reader and writer

@njit(cache=True, inline="always")
def _stable(v):
    return (v & np.uint64(1)) == 0


@njit(cache=True, nogil=True)
def _lookup_kernel(arena, bver, meta, mver, da, dver, l_d, keys, vidx, prefix, out, stats):
    """DIP index per key, DROP for unknown or inactive VIPs.

    An empty ``vidx`` means the VIP index is the key's VIP low byte (key[7]),
    dropped when ``prefix >= 0`` and the upper 24 bits differ.  ``stats``
    accumulates [races, retries, drops]; a race is a lookup that found its
    VIP mid-update and waited for the copy to finish.
    """
    nv = meta.shape[0]
    row = np.int64(1) << l_d
    mask_d = np.uint32(row - 1)
    limit = arena.shape[0]
    from_key = vidx.shape[0] == 0
    races = 0
    retries = 0
    drops = 0
    for p in range(keys.shape[0]):
        key = keys[p]
        if from_key:
            i = np.int64(key[7])
            if prefix >= 0 and ((np.int64(key[4]) << 16) | (np.int64(key[5]) << 8) | np.int64(key[6])) != prefix:
                i = -1
        else:
            i = np.int64(vidx[p])
        if i < 0 or i >= nv:
            out[p] = DROP
            drops += 1
            continue
        waited = False
        while True:
            s = mver[i]
            if not _stable(s):
                continue
            if meta[i, _UPDATING] != 0:
                # A' and B' are only consistent with each other once both are copied
                waited = True
                continue
            if meta[i, _ACTIVE] == 0:
                res = DROP
                if mver[i] != s:
                    continue
                drops += 1
                break
            m = np.int64(1) << meta[i, _LOG2M]
            mask = np.uint64(m - 1)
            h1, h2 = hash_row2(key, np.uint64(meta[i, _SEED_A]), np.uint64(meta[i, _SEED_B]))
            ha = np.int64(h1 & mask)
            hb = np.int64(h2 & mask)
            base_a = meta[i, _OFF_A]
            base_b = meta[i, _OFF_B]
            if base_b + ((m * l_d) >> 3) + _PAD > limit:
                res = _RETRY
                retries += 1
                break
            pa = base_a + ((ha * l_d) >> 3)
            pb = base_b + ((hb * l_d) >> 3)
            ba, ba2 = pa >> _BLOCK_SHIFT, (pa + 2) >> _BLOCK_SHIFT
            bb, bb2 = pb >> _BLOCK_SHIFT, (pb + 2) >> _BLOCK_SHIFT
            va, va2, vb, vb2 = bver[ba], bver[ba2], bver[bb], bver[bb2]
            if not (_stable(va) and _stable(va2) and _stable(vb) and _stable(vb2)):
                continue
            code = read_packed(arena, base_a, ha, l_d, mask_d) ^ read_packed(arena, base_b, hb, l_d, mask_d)
            slot = i * row + np.int64(code)
            bd = (slot * 2) >> _BLOCK_SHIFT
            vd = dver[bd]
            if not _stable(vd):
                continue
            res = np.int64(da[slot])
            if (bver[ba] != va or bver[ba2] != va2 or bver[bb] != vb or bver[bb2] != vb2
                    or dver[bd] != vd or mver[i] != s):
                continue
            if waited:
                races += 1
            break
        out[p] = res
    stats[0] += races
    stats[1] += retries
    stats[2] += drops


@njit(cache=True, nogil=True)
def _seq_copy(dst, off, src, ver):
    """Copy src into dst[off:] block by block under the sequence counters."""
    n = src.shape[0]
    if n == 0:
        return
    first = off >> _BLOCK_SHIFT
    last = (off + n - 1) >> _BLOCK_SHIFT
    one = np.uint64(1)
    for b in range(first, last + 1):
        lo = max(b << _BLOCK_SHIFT, off)
        hi = min((b + 1) << _BLOCK_SHIFT, off + n)
        ver[b] += one
        for j in range(lo, hi):
            dst[j] = src[j - off]
        ver[b] += one


@njit(cache=True, nogil=True)
def _resolve(dip_table, idx, addr, port):
    for p in range(idx.shape[0]):
        d = idx[p]
        if d < 0:
            addr[p] = 0
            port[p] = 0
        else:
            e = dip_table[d]
            addr[p] = np.uint32(e >> np.uint64(16))
            port[p] = np.uint16(e & np.uint64(0xFFFF))


def _align(n: int) -> int:
    return (n + BLOCK_BYTES - 1) & ~(BLOCK_BYTES - 1)


# ---------------------------------------------------------------------------

class DataPlane:
    """Per-VIP Othello lookup tables, DipArray rows and the DIP table."""

    def __init__(self, max_vips: int = 256, l_d: int = 12, l_v: int = 12, vip_prefix: int | None = None,
                 arena_bytes: int = 1 << 16):
        if not 1 <= max_vips <= 256:
            raise ValueError("max_vips must be in 1..256")
        if not 1 <= l_d <= 16 or not 1 <= l_v <= 16:
            raise ValueError("l_d and l_v must be in 1..16")
        self.max_vips = max_vips
        self.l_d = l_d
        self.l_v = l_v
        self.vip_prefix = vip_prefix
        self.meta = np.zeros((max_vips, _META_COLS), dtype=np.int64)
        self.mver = np.zeros(max_vips, dtype=np.uint64)
        self.da = np.zeros((max_vips, 1 << l_d), dtype=np.uint16)
        self._da_flat = self.da.reshape(-1)
        self._da_bytes = self._da_flat.view(np.uint8)
        self.dver = np.zeros(_align(self._da_bytes.shape[0]) >> _BLOCK_SHIFT, dtype=np.uint64)
        self.dip_table = np.zeros(1 << l_v, dtype=np.uint64)
        # arena and its block counters are swapped together on growth
        self._mem = (np.zeros(arena_bytes, dtype=np.uint8),
                     np.zeros(arena_bytes >> _BLOCK_SHIFT, dtype=np.uint64))
        self._top = 0
        self._free: dict[int, list[int]] = {}
        self._regions: dict[int, tuple[int, int]] = {}
        self._wlock = threading.Lock()
        self.drops = 0
        self.races = 0
        self.updates = 0

    # -- DIP table -----------------------------------------------------------

    def set_dip(self, index: int, address: int, port: int) -> None:
        """Install a DIP table entry (one 64-bit store)."""
        if not 0 <= index < self.dip_table.shape[0]:
            raise IndexError("DIP index outside the DIP table")
        self.dip_table[index] = (np.uint64(address) << np.uint64(16)) | np.uint64(port)

    def dip(self, index: int) -> tuple[int, int]:
        e = int(self.dip_table[index])
        return e >> 16, e & 0xFFFF

    # -- region management (writer side) ---------------------------------------

    def _alloc(self, size: int) -> int:
        bucket = self._free.get(size)
        if bucket:
            return bucket.pop()
        off = self._top
        self._top += size
        arena, bver = self._mem
        if self._top > arena.shape[0]:
            cap = arena.shape[0]
            while cap < self._top:
                cap *= 2
            new_arena = np.zeros(cap, dtype=np.uint8)
            new_arena[: arena.shape[0]] = arena
            new_ver = np.zeros(cap >> _BLOCK_SHIFT, dtype=np.uint64)
            new_ver[: bver.shape[0]] = bver
            self._mem = (new_arena, new_ver)
        return off

    def _release(self, vip: int) -> None:
        region = self._regions.pop(vip, None)
        if region is not None:
            self._free.setdefault(region[1], []).append(region[0])

    def _set_meta(self, vip: int, values: dict[int, int]) -> None:
        self.mver[vip] += np.uint64(1)
        for col, v in values.items():
            self.meta[vip, col] = v
        self.mver[vip] += np.uint64(1)

    # -- updates -------------------------------------------------------------

    def apply_update(self, msg: UpdateMessage) -> bool:
        """Install one VIP's new arrays and DipArray row.

        Returns True when applied in place, False when the VIP got a fresh
        region (first install, or m or the seeds changed).
        """
        msg.validate()
        if msg.vip_index >= self.max_vips:
            raise ValueError("vip index beyond the configured VIP table")
        if msg.l_d != self.l_d:
            raise ValueError(f"update carries l_d={msg.l_d}, data plane uses {self.l_d}")
        if msg.da.size and int(msg.da.max()) >= self.dip_table.shape[0]:
            raise ValueError("DA' names a DIP index outside the DIP table")
        i = msg.vip_index
        a = np.frombuffer(msg.a, dtype=np.uint8)
        b = np.frombuffer(msg.b, dtype=np.uint8)
        with self._wlock:
            row = self.meta[i]
            same = bool(row[_ACTIVE] == 1 and row[_LOG2M] == msg.log2m and row[_SEED_A] == msg.seed_a
                    and row[_SEED_B] == msg.seed_b)
            if same:
                arena, bver = self._mem
                self._set_meta(i, {_UPDATING: 1})
                _seq_copy(arena, int(row[_OFF_A]), a, bver)
                _seq_copy(arena, int(row[_OFF_B]), b, bver)
                _seq_copy(self._da_bytes, i * (1 << self.l_d) * 2, msg.da.view(np.uint8), self.dver)
                self._set_meta(i, {_UPDATING: 0})
            else:
                span_a = _align(a.shape[0] + _PAD)
                size = span_a + _align(b.shape[0] + _PAD)
                off = self._alloc(size)
                arena, bver = self._mem
                _seq_copy(arena, off, a, bver)
                _seq_copy(arena, off + span_a, b, bver)
                self._set_meta(i, {_UPDATING: 1})
                _seq_copy(self._da_bytes, i * (1 << self.l_d) * 2, msg.da.view(np.uint8), self.dver)
                self._set_meta(i, {_ACTIVE: 1, _LOG2M: msg.log2m, _SEED_A: msg.seed_a,
                                   _SEED_B: msg.seed_b, _OFF_A: off, _OFF_B: off + span_a, _UPDATING: 0})
                self._release(i)
                self._regions[i] = (off, size)
            self.updates += 1
        return same

    def install(self, vip: int, structure: OthelloStructure, da) -> bool:
        return self.apply_update(UpdateMessage.from_structure(vip, structure, da))

    def remove_vip(self, vip: int) -> None:
        with self._wlock:
            self._set_meta(vip, {_ACTIVE: 0})
            self._release(vip)

    def active(self, vip: int) -> bool:
        return bool(self.meta[vip, _ACTIVE])

    # -- lookups -------------------------------------------------------------

    def _vip_index(self, vip: int) -> int:
        if self.vip_prefix is not None and (vip >> 8) != self.vip_prefix:
            return DROP
        return vip & 0xFF

    def lookup_dips(self, keys, vip_indices=None) -> np.ndarray:
        """Global DIP index per key, -1 where the packet is dropped.

        ``vip_indices`` defaults to the low 8 bits of each key's VIP field.
        """
        keys = as_key_array(keys)
        if vip_indices is None:
            vidx = _NO_VIDX
        else:
            vidx = np.ascontiguousarray(np.broadcast_to(np.asarray(vip_indices, dtype=np.int64),
                                                        (keys.shape[0],)))
        prefix = -1 if self.vip_prefix is None else self.vip_prefix
        out = np.empty(keys.shape[0], dtype=np.int64)
        stats = np.zeros(3, dtype=np.int64)
        arena, bver = self._mem
        _lookup_kernel(arena, bver, self.meta, self.mver, self._da_flat, self.dver, self.l_d,
                       keys, vidx, prefix, out, stats)
        while stats[1]:
            # the arena grew under us: redo those keys against the current one
            todo = np.flatnonzero(out == _RETRY)
            sub = np.empty(todo.shape[0], dtype=np.int64)
            stats[1] = 0
            arena, bver = self._mem
            _lookup_kernel(arena, bver, self.meta, self.mver, self._da_flat, self.dver, self.l_d,
                           keys[todo], vidx if vidx.shape[0] == 0 else vidx[todo], prefix, sub, stats)
            out[todo] = sub
        self.races += int(stats[0])
        self.drops += int(stats[2])
        return out

    def lookup_batch(self, keys, vip_indices=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(dip index, address, port) arrays; index -1 marks a drop."""
        idx = self.lookup_dips(keys, vip_indices)
        addr = np.empty(idx.shape[0], dtype=np.uint32)
        port = np.empty(idx.shape[0], dtype=np.uint16)
        _resolve(self.dip_table, idx, addr, port)
        return idx, addr, port

    def lookup_packet(self, vip: int, key) -> tuple[int, int] | None:
        """(DIP address, port) for one packet, or None when dropped."""
        i = self._vip_index(vip)
        if i == DROP:
            self.drops += 1
            return None
        d = int(self.lookup_dips(key, [i])[0])
        return None if d < 0 else self.dip(d)

    def dcode(self, vip: int, key) -> int:
        """The Dcode a key hits at one VIP (diagnostics and statistics)."""
        return int(self.structure(vip).lookup(key))

    def structure(self, vip: int) -> OthelloStructure:
        row = self.meta[vip]
        if not row[_ACTIVE]:
            raise KeyError(f"VIP index {vip} is not installed")
        m = 1 << int(row[_LOG2M])
        arena, _ = self._mem
        size = packed_size(m, self.l_d)
        a = unpack_bits(arena[row[_OFF_A]: row[_OFF_A] + size], m, self.l_d)
        b = unpack_bits(arena[row[_OFF_B]: row[_OFF_B] + size], m, self.l_d)
        return OthelloStructure(a, b, self.l_d, int(row[_SEED_A]), int(row[_SEED_B]))

    # -- memory --------------------------------------------------------------

    def memory_bits(self, n: int) -> float:
        return dp_memory_bits(n, int(self.meta[:, _ACTIVE].sum()), self.l_d, self.l_v)

    def measured_bits(self) -> int:
        """Live payload actually held: Othello regions, DipArray rows, DIP table, VIP slots."""
        active = int(self.meta[:, _ACTIVE].sum())
        payload = 0
        for vip in self._regions:
            m = 1 << int(self.meta[vip, _LOG2M])
            payload += 2 * packed_size(m, self.l_d) * 8
        return (payload + active * ((1 << self.l_d) * 16 + VIP_SLOT_BITS)
                + self.dip_table.shape[0] * 64)


def pack_update(vip: int, structure: OthelloStructure, da) -> bytes:
    return UpdateMessage.from_structure(vip, structure, da).to_bytes()

