"""Control plane: per-VIP state maps, weighted Dcode partitions, pool changes.

Dcodes are handed out to a VIP's DIPs in proportion to their weights, as
contiguous runs in pool order.  A state's record keeps its Dcode; the data
plane Othello returns that Dcode for the state and a near-uniform Dcode for
any unknown key, so new connections spread by weight with no per-state work
in the data plane.

When a pool changes, only states whose Dcode now points at a different DIP
are touched: they get a fresh Dcode inside their DIP's new run, or are
dropped if their DIP left the pool.  The data plane arrays are then
regenerated over the unchanged graph and shipped as one update message.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .dataplane import DataPlane, UpdateMessage
from .hashing import FLOW_KEY_LEN, as_key_array
from .othellomap import OthelloMap
from .othello import OthelloStructure

__all__ = [
    "ARRIVAL",
    "TERMINATION",
    "ControlPlane",
    "DcodePartition",
    "Dip",
    "DipPool",
    "HostAgentReport",
    "PartitionError",
    "ReportError",
    "decode_reports",
    "encode_reports",
    "partition_dcodes",
    "read_reports_csv",
    "write_reports_csv",
]

ARRIVAL = "arrival"
TERMINATION = "termination"


class PartitionError(ValueError):
    pass


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class Dip:
    address: int
    port: int
    weight: Fraction | int | float = 1

    @property
    def endpoint(self) -> tuple[int, int]:
        return self.address, self.port


@dataclass
class DipPool:
    vip_index: int
    dips: list[Dip] = field(default_factory=list)

    def weights(self) -> list[Fraction]:
        return [Fraction(d.weight) for d in self.dips]

    def position(self, endpoint: tuple[int, int]) -> int:
        for j, d in enumerate(self.dips):
            if d.endpoint == endpoint:
                return j
        return -1


@dataclass(frozen=True)
class DcodePartition:
    """Dcode -> pool position, plus each position's contiguous run."""

    mapping: np.ndarray
    counts: np.ndarray
    starts: np.ndarray

    def dcodes_of(self, position: int) -> range:
        s = int(self.starts[position])
        return range(s, s + int(self.counts[position]))


def _largest_remainder(weights: Sequence[Fraction], total: int) -> list[int]:
    wsum = sum(weights)
    exact = [w * total / wsum for w in weights]
    counts = [int(q) for q in exact]
    short = total - sum(counts)
    # largest fractional part first, lowest position on ties
    order = sorted(range(len(weights)), key=lambda j: (-(exact[j] - counts[j]), j))
    for j in order[:short]:
        counts[j] += 1
    return counts


def partition_dcodes(pool: DipPool, l_d: int, keep: Iterable[int] = ()) -> DcodePartition:
    """Largest-remainder apportionment of the 2^l_d Dcodes over the pool.

    ``keep`` lists zero-weight positions that must still own one Dcode
    (they hold live states that have to stay resolvable).
    """
    weights = pool.weights()
    if any(w < 0 for w in weights):
        raise PartitionError("weights must be non-negative")
    if not weights or sum(weights) == 0:
        raise PartitionError("pool has no DIP with positive weight")
    total = 1 << l_d
    keep = sorted({j for j in keep if weights[j] == 0})
    if len(keep) >= total:
        raise PartitionError("too many zero-weight DIPs to keep resolvable")
    counts = _largest_remainder(weights, total - len(keep))
    for j in keep:
        counts[j] = 1
    counts = np.array(counts, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    mapping = np.repeat(np.arange(len(weights), dtype=np.uint16), counts)
    return DcodePartition(mapping, counts, starts)


# ---------------------------------------------------------------------------
# host-agent reports

@dataclass(frozen=True)
class HostAgentReport:
    kind: str
    vip_index: int
    key: bytes
    dip_index: int = 0


_REPORT = struct.Struct("<BB13sH")
_KIND_CODE = {ARRIVAL: 0, TERMINATION: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def encode_reports(reports: Iterable[HostAgentReport]) -> bytes:
    return b"".join(_REPORT.pack(_KIND_CODE[r.kind], r.vip_index, bytes(r.key), r.dip_index)
                    for r in reports)


def decode_reports(data: bytes) -> list[HostAgentReport]:
    if len(data) % _REPORT.size:
        raise ReportError("report stream is not a whole number of records")
    out = []
    for kind, vip, key, dip in _REPORT.iter_unpack(data):
        if kind not in _CODE_KIND:
            raise ReportError(f"unknown report kind {kind}")
        out.append(HostAgentReport(_CODE_KIND[kind], vip, key, dip))
    return out


def write_reports_csv(path, reports: Iterable[HostAgentReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "vip", "key", "dip"])
        for r in reports:
            w.writerow([r.kind, r.vip_index, bytes(r.key).hex(), r.dip_index])


def read_reports_csv(path) -> list[HostAgentReport]:
    with open(path, newline="") as fh:
        return [HostAgentReport(row["kind"], int(row["vip"]), bytes.fromhex(row["key"]), int(row["dip"]))
                for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------

@dataclass
class _Vip:
    pool: DipPool
    omap: OthelloMap
    partition: DcodePartition
    gidx: np.ndarray  # pool position -> global DIP index
    pushed: OthelloStructure | None = None  # last structure sent to the data plane

    @property
    def da(self) -> np.ndarray:
        return self.gidx[self.partition.mapping].astype(np.uint16)


class ControlPlane:
    """All VIPs' OthelloMaps and DIP pools; emits data plane updates."""

    def __init__(self, l_d: int = 12, l_v: int = 12, dataplane: DataPlane | None = None, seed=None):
        self.l_d = l_d
        self.l_v = l_v
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.dataplane = dataplane
        self.vips: dict[int, _Vip] = {}
        self._dip_index: dict[tuple[int, int], int] = {}
        self._dip_refs: dict[int, int] = {}
        self._free_dips: list[int] = []
        self._next_dip = 0
        self.updates_emitted = 0
        self.rejected = 0

    # -- DIP index allocation ------------------------------------------------

    def dip_index(self, endpoint: tuple[int, int]) -> int:
        return self._dip_index[endpoint]

    def endpoint_table(self) -> tuple[np.ndarray, np.ndarray]:
        """(address << 16 | port, global index) for every DIP in use, sorted by code."""
        codes = np.array([(a << 16) | p for a, p in self._dip_index], dtype=np.int64)
        idx = np.array(list(self._dip_index.values()), dtype=np.int64)
        order = np.argsort(codes)
        return codes[order], idx[order]

    def dip_endpoint(self, index: int) -> tuple[int, int]:
        for ep, i in self._dip_index.items():
            if i == index:
                return ep
        raise KeyError(index)

    def _acquire(self, pool: DipPool) -> np.ndarray:
        out = np.empty(len(pool.dips), dtype=np.uint16)
        for j, d in enumerate(pool.dips):
            i = self._dip_index.get(d.endpoint)
            if i is None:
                if self._free_dips:
                    i = self._free_dips.pop()
                elif self._next_dip < (1 << self.l_v):
                    i = self._next_dip
                    self._next_dip += 1
                else:
                    raise PartitionError("DIP table is full")
                self._dip_index[d.endpoint] = i
                self._dip_refs[i] = 0
                if self.dataplane is not None:
                    self.dataplane.set_dip(i, d.address, d.port)
            self._dip_refs[i] += 1
            out[j] = i
        return out

    def _release(self, gidx: np.ndarray) -> None:
        for i in map(int, gidx):
            self._dip_refs[i] -= 1
            if self._dip_refs[i] == 0:
                del self._dip_refs[i]
                ep = next(e for e, k in self._dip_index.items() if k == i)
                del self._dip_index[ep]
                self._free_dips.append(i)

    # -- VIPs ------------------------------------------------------------------

    def handle_vip_change(self, action: str, vip_index: int, pool: DipPool | None = None) -> UpdateMessage | None:
        if action == "add":
            if vip_index in self.vips:
                raise KeyError(f"VIP index {vip_index} already in use")
            if pool is None:
                raise ValueError("adding a VIP needs its DIP pool")
            self.add_vip(pool)
            return self.sync(vip_index)
        if action == "remove":
            self.remove_vip(vip_index)
            return None
        raise ValueError(f"unknown VIP change {action!r}")

    def add_vip(self, pool: DipPool, capacity: int = 16) -> None:
        i = pool.vip_index
        if i in self.vips:
            raise KeyError(f"VIP index {i} already in use")
        if not 0 <= i <= 255:
            raise ValueError("VIP index out of range")
        part = partition_dcodes(pool, self.l_d)
        gidx = self._acquire(pool)
        omap = OthelloMap(l_d=self.l_d, capacity=capacity, seed=self.rng)
        self.vips[i] = _Vip(pool, omap, part, gidx)

    def remove_vip(self, vip_index: int) -> None:
        v = self.vips.pop(vip_index)
        if self.dataplane is not None:
            self.dataplane.remove_vip(vip_index)
        self._release(v.gidx)

    def map(self, vip_index: int) -> OthelloMap:
        return self.vips[vip_index].omap

    def dip_array(self, vip_index: int) -> np.ndarray:
        return self.vips[vip_index].da

    def partition(self, vip_index: int) -> DcodePartition:
        return self.vips[vip_index].partition

    def state_count(self) -> int:
        return sum(len(v.omap) for v in self.vips.values())

    def sync(self, vip_index: int, apply: bool = True) -> UpdateMessage:
        """Regenerate and emit the VIP's data plane update.

        With ``apply=False`` the message is only returned, for callers that
        deliver it to the data plane themselves.
        """
        v = self.vips[vip_index]
        v.pushed = v.omap.generate_dataplane(self.l_d)
        msg = UpdateMessage.from_structure(vip_index, v.pushed, v.da)
        if apply and self.dataplane is not None:
            self.dataplane.apply_update(msg)
        self.updates_emitted += 1
        return msg

    # -- reports ---------------------------------------------------------------

    def _positions(self, v: _Vip, dips: np.ndarray) -> np.ndarray:
        """Pool position per global DIP index, -1 if not in the pool."""
        lut = np.full(1 << self.l_v, -1, dtype=np.int64)
        lut[v.gidx] = np.arange(v.gidx.shape[0])
        return lut[dips]

    def _draw_dcodes(self, v: _Vip, pos: np.ndarray) -> np.ndarray:
        counts = v.partition.counts[pos]
        return (v.partition.starts[pos] + (self.rng.random(pos.shape[0]) * counts).astype(np.int64)).astype(np.uint16)

    def on_report(self, report: HostAgentReport) -> bool:
        """Apply one report; False when it was rejected or a termination found nothing."""
        if report.kind == ARRIVAL:
            return bool(self.on_arrivals(report.vip_index, report.key, [report.dip_index]).all())
        if report.kind == TERMINATION:
            return bool(self.on_terminations(report.vip_index, report.key).all())
        raise ReportError(f"unknown report kind {report.kind!r}")

    def on_arrivals(self, vip_index: int, keys, dips) -> np.ndarray:
        """Record new states; returns the accepted mask (rejects DIPs without Dcodes)."""
        v = self.vips.get(vip_index)
        if v is None:
            raise ReportError(f"VIP index {vip_index} is not configured")
        keys = as_key_array(keys, FLOW_KEY_LEN)
        dips = np.asarray(dips, dtype=np.int64).reshape(-1)
        in_range = (dips >= 0) & (dips < (1 << self.l_v))
        pos = np.full(dips.shape[0], -1, dtype=np.int64)
        pos[in_range] = self._positions(v, dips[in_range])
        ok = pos >= 0
        ok[ok] = v.partition.counts[pos[ok]] > 0
        if ok.any():
            v.omap.insert_many(keys[ok], dips[ok], self._draw_dcodes(v, pos[ok]))
        self.rejected += int((~ok).sum())
        return ok

    def on_terminations(self, vip_index: int, keys) -> np.ndarray:
        v = self.vips.get(vip_index)
        if v is None:
            raise ReportError(f"VIP index {vip_index} is not configured")
        return v.omap.delete_many(as_key_array(keys, FLOW_KEY_LEN))

    def on_reports(self, reports: Iterable[HostAgentReport]) -> int:
        """Apply a report stream in order; returns the number accepted."""
        accepted = 0
        for r in reports:
            try:
                accepted += self.on_report(r)
            except ReportError:
                self.rejected += 1
        return accepted

    def load_states(self, vip_index: int, keys, dips) -> None:
        """Bulk initial load of distinct keys into an empty VIP (one static build)."""
        v = self.vips[vip_index]
        if len(v.omap):
            raise ValueError("bulk load needs an empty VIP")
        keys = as_key_array(keys, FLOW_KEY_LEN)
        dips = np.asarray(dips, dtype=np.int64)
        pos = self._positions(v, dips)
        if (pos < 0).any() or (v.partition.counts[pos] == 0).any():
            raise ReportError("bulk load names a DIP without Dcodes in this pool")
        v.omap = OthelloMap.from_records(keys, dips, self._draw_dcodes(v, pos), l_d=self.l_d, seed=self.rng)

    def assign_new(self, vip_index: int, keys) -> np.ndarray:
        """DIP a brand-new state gets: what the last synced structure picks."""
        v = self.vips[vip_index]
        if v.pushed is None:
            v.pushed = v.omap.generate_dataplane(self.l_d)
        codes = v.pushed.lookup_batch(as_key_array(keys, FLOW_KEY_LEN))
        return v.da[codes]

    # -- pool change -----------------------------------------------------------

    def handle_pool_change(self, vip_index: int, new_pool: DipPool, apply: bool = True) -> UpdateMessage:
        v = self.vips[vip_index]
        new_pool = DipPool(vip_index, list(new_pool.dips))
        gidx = self._acquire(new_pool)
        omap = v.omap

        # states on DIPs that left the pool restart anyway
        keys, dips, _ = omap.records()
        gone = ~np.isin(dips, gidx)
        if gone.any():
            omap.delete_many(keys[gone].copy())

        # zero-weight DIPs that still carry states keep one Dcode
        _, dips, _ = omap.records()
        lut = np.full(1 << self.l_v, -1, dtype=np.int64)
        lut[gidx] = np.arange(gidx.shape[0])
        live = np.unique(lut[dips])
        keep = [int(j) for j in live if Fraction(new_pool.dips[j].weight) == 0]
        part = partition_dcodes(new_pool, self.l_d, keep)

        old_gidx = v.gidx
        v.pool, v.partition, v.gidx = new_pool, part, gidx
        da = v.da
        _, dips, dcodes = omap.records()
        moved = np.flatnonzero(da[dcodes] != dips)
        if moved.size:
            omap.set_dcodes(moved, self._draw_dcodes(v, lut[dips[moved]]))
        msg = self.sync(vip_index, apply)
        self._release(old_gidx)
        return msg

    def set_weights(self, vip_index: int, weights: Sequence, apply: bool = True) -> UpdateMessage:
        pool = self.vips[vip_index].pool
        dips = [Dip(d.address, d.port, w) for d, w in zip(pool.dips, weights, strict=True)]
        return self.handle_pool_change(vip_index, DipPool(vip_index, dips), apply)
