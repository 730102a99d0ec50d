"""Authoritative record of which DIP each state was first sent to."""

from __future__ import annotations

import numpy as np

__all__ = ["Oracle"]


class Oracle:
    """State id -> first DIP seen, plus violation counters.

    States are identified by dense integer ids; the record for an id is
    written once per lifetime and cleared on termination.
    """

    def __init__(self, capacity: int = 0):
        self.assigned = np.full(capacity, -1, dtype=np.int64)
        self.vip = np.full(capacity, -1, dtype=np.int64)
        self.alive = np.zeros(capacity, dtype=bool)
        self.pcc_violations = 0
        self.false_hits = 0
        self.cross_vip_hits = 0
        self.checked = 0
        self.pools: dict[int, set[int]] = {}

    def _grow(self, n: int) -> None:
        if n <= self.assigned.shape[0]:
            return
        cap = max(n, 2 * self.assigned.shape[0])
        for name, fill in (("assigned", -1), ("vip", -1), ("alive", False)):
            old = getattr(self, name)
            new = np.full(cap, fill, dtype=old.dtype)
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def set_pool(self, vip: int, endpoints) -> None:
        self.pools[vip] = {int(e) for e in endpoints}

    def in_pool(self, vips: np.ndarray, dips: np.ndarray) -> np.ndarray:
        out = np.zeros(dips.shape[0], dtype=bool)
        for v in np.unique(vips):
            sel = vips == v
            members = np.fromiter(self.pools.get(int(v), ()), dtype=np.int64)
            out[sel] = np.isin(dips[sel], members)
        return out

    def record(self, ids, vips, dips) -> None:
        """First packet of new states: remember where they went."""
        ids = np.asarray(ids, dtype=np.int64)
        dips = np.asarray(dips, dtype=np.int64)
        vips = np.asarray(vips, dtype=np.int64)
        self._grow(int(ids.max()) + 1 if ids.size else 0)
        self.cross_vip_hits += int((~self.in_pool(vips, dips)).sum())
        fresh = ~self.alive[ids]
        self.assigned[ids[fresh]] = dips[fresh]
        self.vip[ids[fresh]] = vips[fresh]
        self.alive[ids[fresh]] = True

    def observe(self, ids, dips, hits=None) -> int:
        """Later packets of live states; returns the violations found in this batch.

        A mismatch counts only while the recorded DIP is still in the pool
        (states on a removed DIP restart and are not owed consistency).
        ``hits`` flags lookups that matched a stored entry, for tables that
        report hits: a hit for an id that was never recorded is a false hit.
        """
        ids = np.asarray(ids, dtype=np.int64)
        dips = np.asarray(dips, dtype=np.int64)
        self._grow(int(ids.max()) + 1 if ids.size else 0)
        self.checked += ids.shape[0]
        live = self.alive[ids]
        if hits is not None:
            self.false_hits += int((np.asarray(hits) & ~live).sum())
        vips = self.vip[ids]
        self.cross_vip_hits += int((live & ~self.in_pool(vips, dips)).sum())
        owed = live & self.in_pool(vips, self.assigned[ids])
        bad = int((owed & (dips != self.assigned[ids])).sum())
        self.pcc_violations += bad
        return bad

    def terminate(self, ids) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        self.alive[ids] = False
        self.assigned[ids] = -1

    def live_ids(self) -> np.ndarray:
        return np.flatnonzero(self.alive)

    def counters(self) -> dict[str, int]:
        return {"pcc_violations": self.pcc_violations, "false_hits": self.false_hits,
                "cross_vip_hits": self.cross_vip_hits, "checked": self.checked}
