"""Benchmark orchestration: LB adapters, throughput, dynamic scenarios, reports.

Every adapter answers lookups with endpoint codes (``address << 16 | port``,
-1 for a drop) so one oracle can judge all of them.  Mutating calls do their
control-plane work immediately and return the data-plane work as a callable,
which lets a scenario decide whether that work lands inside a timed window.
"""

from __future__ import annotations

import csv
import json
import math
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..baselines import CuckooDigestTable, MultiLevelDigestTable, StaticHashLB, cuckoo_memory_bits
from ..controlplane import ControlPlane, Dip, DipPool, partition_dcodes
from ..dataplane import DataPlane
from ..hashing import hash_keys
from ..othello import Othello
from .lfsr import KeyStream
from .oracle import Oracle
from .stats import chi_squared_uniform, ks_uniform, load_balance_measure
from .workload import (
    DIP_PORT,
    VIP_PREFIX,
    WorkloadSpec,
    assign_by_weight,
    dip_address,
    make_pools,
    needed_dip_bits,
    pool_codes,
    vip_address,
)

__all__ = [
    "ALGORITHMS",
    "OthelloLB",
    "DigestLB",
    "RunReport",
    "SCHEMA_VERSION",
    "StaticLB",
    "World",
    "make_lb",
    "measure_throughput",
    "run_benchmark",
    "run_uniformity",
    "simulate_load_balance",
]

SCHEMA_VERSION = 1
ALGORITHMS = ("othello", "cuckoo_digest", "multilevel_digest", "static_hash")
CHUNK = 1 << 14


def _noop() -> None:
    return None


def _by_vip(vidx: np.ndarray):
    """(vip, positions) groups of a VIP index array."""
    order = np.argsort(vidx, kind="stable")
    v = vidx[order]
    cuts = np.flatnonzero(np.diff(v)) + 1
    for grp in np.split(order, cuts):
        if grp.size:
            yield int(vidx[grp[0]]), grp


# ---------------------------------------------------------------------------
# adapters

class OthelloLB:
    """Control plane + data plane; the data plane never sees per-state work."""

    name = "othello"
    learns = True

    def __init__(self, pools: list[DipPool], l_d: int = 12, l_v: int = 12, seed=None):
        self.dp = DataPlane(256, l_d, l_v, vip_prefix=VIP_PREFIX, arena_bytes=1 << 20)
        self.cp = ControlPlane(l_d, l_v, dataplane=self.dp, seed=seed)
        for p in pools:
            self.cp.add_vip(p)

    def _indices(self, codes: np.ndarray) -> np.ndarray:
        table, idx = self.cp.endpoint_table()
        pos = np.clip(np.searchsorted(table, codes), 0, table.shape[0] - 1)
        return np.where(table[pos] == codes, idx[pos], -1)

    def load(self, keys, vidx, codes) -> None:
        gidx = self._indices(codes)
        for v, grp in _by_vip(vidx):
            self.cp.load_states(v, keys[grp], gidx[grp])
        for v in self.cp.vips:
            self.cp.sync(v)

    def lookup_hits(self, keys):
        idx = self.dp.lookup_dips(keys)
        codes = np.where(idx >= 0, self.dp.dip_table[np.maximum(idx, 0)].astype(np.int64), -1)
        return codes, None

    def lookup(self, keys) -> np.ndarray:
        return self.lookup_hits(keys)[0]

    def lookup_fast(self, keys) -> np.ndarray:
        return self.dp.lookup_dips(keys)

    def arrive(self, keys, vidx, codes):
        gidx = self._indices(codes)
        for v, grp in _by_vip(vidx):
            self.cp.on_arrivals(v, keys[grp], gidx[grp])
        return _noop

    def terminate(self, keys, vidx):
        for v, grp in _by_vip(vidx):
            self.cp.on_terminations(v, keys[grp])
        return _noop

    def pool_change(self, vip: int, pool: DipPool, gone_keys=None):
        msg = self.cp.handle_pool_change(vip, pool, apply=False)
        return lambda: self.dp.apply_update(msg)

    def rebuilds(self) -> int:
        return int(sum(v.omap.o.rebuilds for v in self.cp.vips.values()))

    def memory(self) -> dict:
        n = self.cp.state_count()
        return {"accounting_bits": self.dp.memory_bits(n), "measured_bits": self.dp.measured_bits(),
                "cp_accounting_bits": float(sum(v.omap.memory_bits() for v in self.cp.vips.values())),
                "states": n}


class DigestLB:
    """Digest table of live states plus one DipArray row per VIP for new keys."""

    learns = True

    def __init__(self, pools: list[DipPool], kind: str = "cuckoo", capacity: int = 1 << 16, l_d: int = 12,
                 l_v: int = 12, digest_bits: int = 64, load: float | None = None, seed=None):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        if kind == "cuckoo":
            self.table = CuckooDigestTable(capacity, digest_bits, load or 0.9, seed=rng)
        elif kind == "multilevel":
            # a 4-level cascade fills only to ~0.68 before a key finds no slot
            self.table = MultiLevelDigestTable(capacity, digest_bits=digest_bits, load=load or 0.6, seed=rng)
        else:
            raise ValueError(f"unknown digest table {kind!r}")
        self.name = f"{kind}_digest"
        self.l_d = l_d
        self.l_v = l_v
        self.hseed = int(rng.integers(0, 1 << 32))
        self.codes = np.full(1 << l_v, -1, dtype=np.int64)
        self._index: dict[int, int] = {}
        self.da = np.zeros((256, 1 << l_d), dtype=np.uint16)
        for p in pools:
            self.da[p.vip_index] = self._row(p)

    def _gidx(self, codes: np.ndarray) -> np.ndarray:
        uniq, inv = np.unique(codes, return_inverse=True)
        out = np.empty(uniq.shape[0], dtype=np.int64)
        for k, c in enumerate(uniq.tolist()):
            i = self._index.get(c)
            if i is None:
                i = len(self._index)
                if i >= self.codes.shape[0]:
                    raise OverflowError("DIP table is full")
                self._index[c] = i
                self.codes[i] = c
            out[k] = i
        return out[inv]

    def _row(self, pool: DipPool) -> np.ndarray:
        part = partition_dcodes(pool, self.l_d)
        return self._gidx(pool_codes(pool))[part.mapping].astype(np.uint16)

    def load(self, keys, vidx, codes) -> None:
        self.table.insert_many(keys, self._gidx(codes))

    def lookup_hits(self, keys):
        r = self.table.lookup_batch(keys, count=False)
        hit = r >= 0
        if not hit.all():
            miss = np.flatnonzero(~hit)
            km = keys[miss]
            h = hash_keys(km, self.hseed) & np.uint32((1 << self.l_d) - 1)
            r[miss] = self.da[km[:, 7], h]
        return self.codes[r], hit

    def lookup(self, keys) -> np.ndarray:
        return self.lookup_hits(keys)[0]

    def lookup_fast(self, keys) -> np.ndarray:
        return self.table.lookup_batch(keys, count=False)

    def arrive(self, keys, vidx, codes):
        g = self._gidx(codes)
        return lambda: self.table.insert_many(keys, g)

    def terminate(self, keys, vidx):
        return lambda: self.table.delete_many(keys)

    def pool_change(self, vip: int, pool: DipPool, gone_keys=None):
        row = self._row(pool)

        def apply():
            if gone_keys is not None and len(gone_keys):
                self.table.delete_many(gone_keys)
            self.da[vip] = row
        return apply

    def rebuilds(self) -> int:
        return 0

    def memory(self) -> dict:
        n = self.table.n
        vips = int((self.da != 0).any(axis=1).sum())
        return {"accounting_bits": cuckoo_memory_bits(n, vips, self.l_d, self.l_v, self.table.digest_bits),
                "measured_bits": self.table.measured_bits(self.l_v) + vips * (1 << self.l_d) * 16
                + (1 << self.l_v) * 48, "states": n}


class StaticLB:
    """Stateless hashing over each VIP's DIP list; keeps no state at all."""

    name = "static_hash"
    learns = False

    def __init__(self, pools: list[DipPool], seed: int = 0):
        self.hash = StaticHashLB(1, seed=seed)
        self.pools = {p.vip_index: pool_codes(p) for p in pools}
        self._flatten()

    def _flatten(self) -> None:
        self.t = np.ones(256, dtype=np.uint64)
        self.base = np.zeros(256, dtype=np.int64)
        flat = []
        off = 0
        for v in sorted(self.pools):
            c = self.pools[v]
            self.t[v], self.base[v] = c.shape[0], off
            flat.append(c)
            off += c.shape[0]
        self.flat = np.concatenate(flat) if flat else np.zeros(0, dtype=np.int64)

    def lookup_hits(self, keys):
        h = hash_keys(keys, self.hash.seed).astype(np.uint64)
        v = keys[:, 7].astype(np.int64)
        slot = ((h * self.t[v]) >> np.uint64(32)).astype(np.int64)
        return self.flat[self.base[v] + slot], None

    def lookup(self, keys) -> np.ndarray:
        return self.lookup_hits(keys)[0]

    def lookup_fast(self, keys) -> np.ndarray:
        return self.lookup(keys)

    def load(self, keys, vidx, codes) -> None:
        return None

    def arrive(self, keys, vidx, codes):
        return _noop

    def terminate(self, keys, vidx):
        return _noop

    def pool_change(self, vip: int, pool: DipPool, gone_keys=None):
        codes = pool_codes(pool)

        def apply():
            self.pools[vip] = codes
            self._flatten()
        return apply

    def rebuilds(self) -> int:
        return 0

    def memory(self) -> dict:
        return {"accounting_bits": float(self.flat.shape[0] * 48), "measured_bits": int(self.flat.nbytes * 8),
                "states": 0}


def make_lb(algorithm: str, pools: list[DipPool], capacity: int, l_d: int = 12, l_v: int = 12, seed=None):
    if algorithm == "othello":
        return OthelloLB(pools, l_d, l_v, seed=seed)
    if algorithm == "cuckoo_digest":
        return DigestLB(pools, "cuckoo", capacity, l_d, l_v, seed=seed)
    if algorithm == "multilevel_digest":
        return DigestLB(pools, "multilevel", capacity, l_d, l_v, seed=seed)
    if algorithm == "static_hash":
        return StaticLB(pools, seed=0 if seed is None else int(seed) & 0xFFFFFFFF)
    raise ValueError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")


# ---------------------------------------------------------------------------
# throughput

def measure_throughput(fn, keys: np.ndarray, window: float = 0.5, repetitions: int = 3, threads: int = 1,
                       chunk: int = CHUNK) -> dict:
    """Lookups per second of ``fn`` over ``keys``, averaged over repetitions.

    Each thread cycles over its own slice of the keys for ``window`` seconds.
    """
    fn(keys[: min(chunk, keys.shape[0])])
    slices = np.array_split(np.arange(keys.shape[0]), threads)
    rates = []
    for _ in range(repetitions):
        done = [0] * threads
        start = threading.Barrier(threads + 1)

        def work(t: int, deadline_box: list) -> None:
            sl = keys[slices[t][0]: slices[t][-1] + 1]
            pos = 0
            start.wait()
            deadline = deadline_box[0]
            while time.perf_counter() < deadline:
                if pos + chunk > sl.shape[0]:
                    pos = 0
                fn(sl[pos: pos + chunk])
                done[t] += min(chunk, sl.shape[0])
                pos += chunk

        box = [0.0]
        pool = [threading.Thread(target=work, args=(t, box)) for t in range(threads)]
        for th in pool:
            th.start()
        t0 = time.perf_counter()
        box[0] = t0 + window
        start.wait()
        for th in pool:
            th.join()
        rates.append(sum(done) / (time.perf_counter() - t0))
    return {"lookups_per_s": float(np.mean(rates)), "samples": [float(r) for r in rates], "threads": threads}


# ---------------------------------------------------------------------------
# the simulated network: keys, oracle, pools and one LB

class World:
    """One LB plus the oracle and state population it is judged against."""

    def __init__(self, spec: WorkloadSpec, algorithm: str, capacity: int | None = None, pools=None):
        spec.validate()
        self.spec = spec
        self.rng = np.random.default_rng(spec.rng_seed)
        self.pools = pools if pools is not None else make_pools(spec, self.rng)
        self.l_v = needed_dip_bits(self.pools, slack=256)
        self.stream = KeyStream(spec.rng_seed * 7919 + 1, [vip_address(p.vip_index) for p in self.pools])
        self._keys = np.zeros((max(spec.state_count, 1024), 13), dtype=np.uint8)
        self._vidx = np.zeros(self._keys.shape[0], dtype=np.int64)
        self.n_ids = 0
        self.oracle = Oracle(self._keys.shape[0])
        for p in self.pools:
            self.oracle.set_pool(p.vip_index, pool_codes(p))
        self._next_slot = {p.vip_index: len(p.dips) for p in self.pools}
        cap = capacity or max(spec.state_count, 1024)
        self.lb = make_lb(algorithm, self.pools, cap, spec.l_d, self.l_v, seed=spec.rng_seed)
        self.cp_times: list[float] = []
        self.update_violations: list[int] = []
        self.changes = 0

    # -- population ------------------------------------------------------------

    def keys_of(self, ids) -> np.ndarray:
        return self._keys[ids]

    def _new_ids(self, n: int) -> np.ndarray:
        need = self.n_ids + n
        if need > self._keys.shape[0]:
            cap = max(need, 2 * self._keys.shape[0])
            k = np.zeros((cap, 13), dtype=np.uint8)
            k[: self.n_ids] = self._keys[: self.n_ids]
            v = np.zeros(cap, dtype=np.int64)
            v[: self.n_ids] = self._vidx[: self.n_ids]
            self._keys, self._vidx = k, v
        ids = np.arange(self.n_ids, need, dtype=np.int64)
        self._keys[ids] = self.stream.next(n)
        self._vidx[ids] = self._keys[ids, 7]
        self.n_ids = need
        return ids

    def populate(self) -> float:
        """Initial bulk load; returns the control-plane build time."""
        ids = self._new_ids(self.spec.state_count)
        keys, vidx = self._keys[ids], self._vidx[ids]
        if self.lb.learns:
            codes = assign_by_weight(self.pools, vidx, self.rng)
        else:
            codes = self.lb.lookup(keys)
        t0 = time.perf_counter()
        self.lb.load(keys, vidx, codes)
        elapsed = time.perf_counter() - t0
        self.oracle.record(ids, vidx, codes)
        return elapsed

    def arrive(self, n: int):
        """n new states: the data plane picks their DIP, the oracle records it."""
        ids = self._new_ids(n)
        keys, vidx = self._keys[ids], self._vidx[ids]
        codes = self.lb.lookup(keys)
        self.oracle.record(ids, vidx, codes)
        return ids, self.lb.arrive(keys, vidx, codes)

    def terminate(self, n: int):
        live = self.oracle.live_ids()
        ids = self.rng.choice(live, size=min(n, live.shape[0]), replace=False) if n else live[:0]
        act = self.lb.terminate(self._keys[ids], self._vidx[ids])
        self.oracle.terminate(ids)
        return ids, act

    # -- pool changes ----------------------------------------------------------

    def _changed_pool(self, vip: int, kind: str) -> tuple[DipPool, int | None]:
        pool = next(p for p in self.pools if p.vip_index == vip)
        dips = list(pool.dips)
        removed = None
        positive = [j for j, d in enumerate(dips) if d.weight > 0]
        if kind == "remove" and len(positive) > 1:
            j = int(self.rng.choice(positive))
            removed = (dips[j].address << 16) | dips[j].port
            del dips[j]
        elif kind in ("add", "remove"):
            slot = self._next_slot[vip]
            self._next_slot[vip] += 1
            lo, hi = self.spec.weights
            dips.append(Dip(dip_address(vip, slot), DIP_PORT, int(self.rng.integers(max(lo, 1), hi + 1))))
        else:
            lo, hi = self.spec.weights
            w = self.rng.integers(max(lo, 1), hi + 1, len(dips))
            dips = [Dip(d.address, d.port, int(x) if d.weight > 0 else 0) for d, x in zip(dips, w)]
        return DipPool(vip, dips), removed

    def pool_change(self, kind: str | None = None, vip: int | None = None):
        """Change one VIP's pool; returns (data plane action, ids restarted)."""
        kind = kind or ("remove", "add", "reweight")[self.changes % 3]
        vip = int(self.rng.choice([p.vip_index for p in self.pools])) if vip is None else vip
        self.changes += 1
        new_pool, removed = self._changed_pool(vip, kind)
        gone = np.zeros(0, dtype=np.int64)
        if removed is not None:
            live = self.oracle.live_ids()
            gone = live[(self.oracle.vip[live] == vip) & (self.oracle.assigned[live] == removed)]
        t0 = time.perf_counter()
        act = self.lb.pool_change(vip, new_pool, self._keys[gone])
        self.cp_times.append(time.perf_counter() - t0)
        self.pools = [new_pool if p.vip_index == vip else p for p in self.pools]
        self.oracle.set_pool(vip, pool_codes(new_pool))
        self.oracle.terminate(gone)
        return act, gone

    # -- checks ----------------------------------------------------------------

    def check(self, ids=None) -> int:
        """Look up live states (all by default) and report new PCC violations."""
        ids = self.oracle.live_ids() if ids is None else ids
        bad = 0
        for s in range(0, ids.shape[0], 1 << 18):
            part = ids[s: s + (1 << 18)]
            codes, hits = self.lb.lookup_hits(self._keys[part])
            bad += self.oracle.observe(part, codes, hits)
        return bad

    def check_unknown(self, n: int) -> dict:
        """Fresh keys: each must land on its own VIP's pool and never hit a stored entry."""
        keys = self.stream.next(n)
        vidx = keys[:, 7].astype(np.int64)
        codes, hits = self.lb.lookup_hits(keys)
        false_hits = int(hits.sum()) if hits is not None else 0
        cross = int((~self.oracle.in_pool(vidx, codes)).sum())
        self.oracle.false_hits += false_hits
        self.oracle.cross_vip_hits += cross
        return {"unknown_checked": n, "false_hits": false_hits, "cross_vip_hits": cross}

    def live_keys(self) -> np.ndarray:
        return self._keys[self.oracle.live_ids()]

    # -- scenarios -------------------------------------------------------------

    def run_pcc(self, rates, period: float = 10.0, steps: int = 10, sample: int = 1 << 16) -> dict:
        """Arrivals at each rate for one period, then one pool change; check after every step.

        Population stays level: each step retires as many states as arrive.
        """
        per_update = []
        for k, rate in enumerate(rates):
            n_step = int(round(rate * period / steps))
            for _ in range(steps):
                _, act = self.terminate(n_step)
                act()
                _, act = self.arrive(n_step)
                act()
                live = self.oracle.live_ids()
                self.check(self.rng.choice(live, size=min(sample, live.shape[0]), replace=False))
            act, _ = self.pool_change()
            act()
            per_update.append(self.check())
        self.update_violations.extend(per_update)
        return {"rates": [float(r) for r in rates], "updates": len(per_update),
                "violations_per_update": per_update, **self.oracle.counters()}

    def _spin(self, keys, duration: float, events, pos: int, chunk: int, series=None, offset: float = 0.0,
              span: float = 1.0):
        """Look up ``keys`` in chunks for ``duration`` s, firing ``(at, action)`` events when due."""
        fn = self.lb.lookup_fast
        done = 0
        k = 0
        t0 = time.perf_counter()
        while True:
            now = time.perf_counter() - t0
            if now >= duration:
                break
            while k < len(events) and now >= events[k][0]:
                events[k][1]()
                k += 1
            if pos + chunk > keys.shape[0]:
                pos = 0
            fn(keys[pos: pos + chunk])
            pos += chunk
            done += chunk
            if series is not None:
                b = int((offset + now) / span * series.shape[0])
                series[min(b, series.shape[0] - 1)] += chunk
        for _, act in events[k:]:
            act()
        return done, time.perf_counter() - t0, pos

    def run_window(self, rate: float, window: float = 1.0, update: bool = True, pairs: int = 5,
                   slices: int = 50, chunk: int = 1 << 13, bins: int = 10) -> dict:
        """Dynamic lookups for ``window`` s interleaved with as much static time.

        Control-plane work is prepared first.  The data plane's share
        (arrival and termination writes, then the pool change at the midpoint)
        is spread over the dynamic time, which is cut into ``pairs`` pieces,
        each preceded by a static piece of equal length.  Alternating this
        finely cancels drift in machine speed.
        """
        n = int(round(rate * window))
        events = []
        for k, part in enumerate(np.array_split(np.arange(n), slices) if n else []):
            _, a1 = self.terminate(part.shape[0])
            _, a2 = self.arrive(part.shape[0])
            events += [(k * window / slices, a1), (k * window / slices, a2)]
        if update:
            events.append((window / 2, self.pool_change()[0]))
        events.sort(key=lambda e: e[0])
        keys = self.live_keys()
        keys = keys[self.rng.permutation(keys.shape[0])]
        self.lb.lookup_fast(keys[:chunk])
        series = np.zeros(bins, dtype=np.int64)
        piece = window / pairs
        stat = dyn = 0
        st_t = dy_t = 0.0
        pos = 0
        for j in range(pairs):
            d, t, pos = self._spin(keys, piece, [], pos, chunk)
            stat, st_t = stat + d, st_t + t
            lo, hi = j * piece, (j + 1) * piece
            mine = [(at - lo, act) for at, act in events if lo <= at < hi or (j == pairs - 1 and at >= hi)]
            d, t, pos = self._spin(keys, piece, mine, pos, chunk, series, lo, window)
            dyn, dy_t = dyn + d, dy_t + t
        return {"rate": float(rate), "lookups_per_s": dyn / dy_t, "static_lookups_per_s": stat / st_t,
                "series": (series * bins / window).tolist()}

    def run_update_impact(self, rates, window: float = 1.0) -> dict:
        """One interleaved window per arrival rate; degradation is relative to its static share."""
        phases = [self.run_window(r, window) for r in rates]
        deg = [1.0 - p["lookups_per_s"] / p["static_lookups_per_s"] for p in phases]
        self.check()
        top = max(rates)
        peak = [d for d, r in zip(deg, rates) if r == top]
        return {"static_lookups_per_s": float(np.mean([p["static_lookups_per_s"] for p in phases])),
                "phases": phases, "degradation": deg, "max_degradation": float(max(deg)),
                "mean_degradation": float(np.mean(deg)), "peak_rate_degradation": float(np.mean(peak)),
                **self.oracle.counters()}


# ---------------------------------------------------------------------------
# load balance over time

def simulate_load_balance(dips: int = 128, weights=(1, 4), zero_weight: int = 2, rate: float = 400_000,
                          lifetime: float = 0.5, duration: float = 8.0, shock_at: float = 4.0,
                          dt: float = 0.05, l_d: int = 12, seed: int = 1) -> dict:
    """One VIP under Poisson arrivals with exponential lifetimes and a weight shock.

    New connections take whatever DIP the data plane picks; the control plane
    learns them from host reports.  At ``shock_at`` the positive weights are
    permuted.  Returns the max(L)/avg(L) series and the normalized loads 2 s
    after the shock.
    """
    rng = np.random.default_rng(seed)
    w = rng.integers(weights[0], weights[1] + 1, dips)
    w[rng.choice(dips, zero_weight, replace=False)] = 0
    pool = DipPool(0, [Dip(dip_address(0, j), DIP_PORT, int(w[j])) for j in range(dips)])
    dp = DataPlane(1, l_d, 12, vip_prefix=VIP_PREFIX)
    cp = ControlPlane(l_d, 12, dataplane=dp, seed=rng)
    cp.add_vip(pool)
    cp.sync(0)
    stream = KeyStream(seed * 104729 + 7, vip_address(0))
    gidx_pos = {int(g): j for j, g in enumerate(cp.vips[0].gidx)}
    lut = np.full(1 << 12, -1, dtype=np.int64)
    for g, j in gidx_pos.items():
        lut[g] = j
    counts = np.zeros(dips, dtype=np.int64)
    steps = int(round(duration / dt))
    shock_step = int(round(shock_at / dt))
    deaths: dict[int, list] = {}
    times, measure = [], []
    post = None
    weights_now = w.astype(np.float64)
    for s in range(steps):
        if s == shock_step:
            pos = np.flatnonzero(w > 0)
            new_w = w.copy()
            new_w[pos] = w[rng.permutation(pos)]
            cp.set_weights(0, [int(x) for x in new_w])
            weights_now = new_w.astype(np.float64)
        for keys, j in deaths.pop(s, []):
            cp.on_terminations(0, keys)
            np.subtract.at(counts, j, 1)
        n = int(rng.poisson(rate * dt))
        if n:
            keys = stream.next(n)
            g = dp.lookup_dips(keys)
            cp.on_arrivals(0, keys, g)
            j = lut[g]
            np.add.at(counts, j, 1)
            life = np.ceil(rng.exponential(lifetime, n) / dt).astype(np.int64) + s
            for d, grp in _group_by(life):
                deaths.setdefault(int(d), []).append((keys[grp], j[grp]))
        t = (s + 1) * dt
        times.append(round(t, 6))
        measure.append(load_balance_measure(counts, weights_now))
        if post is None and t >= shock_at + 2.0 - 1e-9:
            pos = weights_now > 0
            load = counts[pos] / weights_now[pos]
            post = (load / load.mean()).tolist()
    times_a, meas_a = np.array(times), np.array(measure)
    steady = meas_a[(times_a >= shock_at - 1.0) & (times_a < shock_at)]
    after = np.flatnonzero((times_a > shock_at) & (meas_a <= 1.2))
    recovery = float(times_a[after[0]] - shock_at) if after.size else math.inf
    return {"times": times, "measure": measure, "steady_max": float(steady.max()),
            "peak_after_shock": float(meas_a[times_a > shock_at].max()), "recovery_s": recovery,
            "post_shock_loads": post or [], "dips": dips, "rate": rate, "lifetime": lifetime}


def run_uniformity(l_d: int = 12, trials: int = 100, n: int = 12288, keys: int = 1 << 20, alpha: float = 0.05,
                   seed: int = 1) -> dict:
    """Dcode histogram of fresh LFSR keys against a Dcode structure, per seeded trial.

    Each trial stores ``n`` keys with uniformly drawn Dcodes (what the control
    plane's weighted draws amount to) and tallies the Dcodes that ``keys``
    unseen keys land on; returns the chi-squared and KS failure rates.
    """
    chi_fail = ks_fail = 0
    rows = []
    for t in range(trials):
        rng = np.random.default_rng(seed * 1_000_003 + t)
        stored = KeyStream(int(rng.integers(1, 1 << 63)), vip_address(0)).next(n)
        o = Othello.build(stored, rng.integers(0, 1 << l_d, n, dtype=np.uint32), l_d, seed=rng)
        probe = KeyStream(int(rng.integers(1, 1 << 63)) | 1, vip_address(0)).next(keys)
        counts = np.bincount(o.lookup_batch(probe).astype(np.int64), minlength=1 << l_d)
        c, k = chi_squared_uniform(counts, alpha), ks_uniform(counts, alpha)
        chi_fail += not c.passed
        ks_fail += not k.passed
        rows.append({"trial": t, "chi2": c.statistic, "chi2_pass": c.passed, "ks": k.statistic,
                     "ks_pass": k.passed})
    return {"l_d": l_d, "trials": trials, "n": n, "keys": keys, "chi2_fail_rate": chi_fail / trials,
            "ks_fail_rate": ks_fail / trials, "rows": rows}


def _group_by(values: np.ndarray):
    order = np.argsort(values, kind="stable")
    v = values[order]
    for grp in np.split(order, np.flatnonzero(np.diff(v)) + 1):
        yield values[grp[0]], grp


# ---------------------------------------------------------------------------
# reports

@dataclass
class RunReport:
    algorithm: str
    spec: dict
    throughput: dict = field(default_factory=dict)
    memory: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    cp_response_s: list = field(default_factory=list)
    rebuilds: int = 0
    dynamics: dict = field(default_factory=dict)
    load_balance: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=float)

    def write_series_csv(self, path) -> None:
        """Throughput per window bin, one row per (phase, bin), for plotting."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "rate", "bin", "lookups_per_s"])
            for k, ph in enumerate(self.dynamics.get("phases", [])):
                for b, v in enumerate(ph["series"]):
                    w.writerow([k, ph["rate"], b, v])


def run_benchmark(spec: WorkloadSpec, algorithm: str) -> RunReport:
    """Build, verify and time one LB at the spec's scale."""
    world = World(spec, algorithm)
    build_s = world.populate()
    world.check()
    world.check_unknown(min(1 << 16, max(spec.state_count, 1024)))
    keys = world.live_keys()
    tp = {"single": measure_throughput(world.lb.lookup_fast, keys, spec.window, spec.repetitions, 1)}
    if spec.threads > 1:
        tp["multi"] = measure_throughput(world.lb.lookup_fast, keys, spec.window, spec.repetitions,
                                         spec.threads)
    dyn = {}
    if spec.arrival_rate > 0 or spec.pool_change_period > 0:
        rates = [spec.arrival_rate] * spec.phases
        period = spec.pool_change_period or 10.0
        dyn = world.run_update_impact(rates, min(spec.window * 2, period))
    report = RunReport(algorithm, spec.as_dict(), throughput=tp, memory=world.lb.memory(),
                       counters=world.oracle.counters(), cp_response_s=world.cp_times,
                       rebuilds=world.lb.rebuilds(), dynamics=dyn)
    report.memory["build_s"] = build_s
    return report
