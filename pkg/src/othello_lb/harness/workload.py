"""Synthetic workloads: VIP/DIP pools (DIP-E, DIP-V) and state populations."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..controlplane import Dip, DipPool
from .lfsr import lfsr_keys

__all__ = [
    "DIP_PORT",
    "NET_SCALES",
    "VIP_PREFIX",
    "WorkloadSpec",
    "assign_by_weight",
    "dip_address",
    "endpoint_code",
    "make_pools",
    "make_states",
    "needed_dip_bits",
    "pool_codes",
    "vip_address",
]

VIP_PREFIX = 0xC0A800  # 192.168.0.0/24
DIP_PORT = 80

# (DIP-E count, DIP-V range) per network scale
NET_SCALES = {"small": (32, (8, 64)), "large": (128, (32, 256))}


def vip_address(index: int) -> int:
    return (VIP_PREFIX << 8) | index


def dip_address(vip: int, j: int) -> int:
    """10.<vip>.<j / 256>.<j % 256>: unique per (VIP, slot)."""
    return 0x0A000000 | (vip << 16) | j


def endpoint_code(address, port) -> np.ndarray:
    """(address, port) packed as address << 16 | port, the DIP table encoding."""
    return (np.asarray(address, dtype=np.uint64) << np.uint64(16)) | np.asarray(port, dtype=np.uint64)


@dataclass
class WorkloadSpec:
    net: str = "small"
    dist: str = "dip-e"
    vip_count: int = 128
    dips_per_vip: int | None = None
    dip_range: tuple[int, int] | None = None
    state_count: int = 100_000
    arrival_rate: float = 0.0
    pool_change_period: float = 0.0
    weight_change_period: float = 0.0
    phases: int = 10
    threads: int = 1
    repetitions: int = 3
    window: float = 0.5
    l_d: int = 12
    rng_seed: int = 1
    weights: tuple[int, int] = (1, 1)
    zero_weight: int = 0
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.net not in NET_SCALES:
            raise ValueError(f"unknown network scale {self.net!r}")
        if self.dist not in ("dip-e", "dip-v"):
            raise ValueError(f"unknown DIP distribution {self.dist!r}")
        if not 1 <= self.vip_count <= 256:
            raise ValueError("vip_count must be in 1..256")
        lo, hi = self.range()
        if lo < 1 or hi < lo:
            raise ValueError("DIP-V range must satisfy 1 <= low <= high")
        if hi > 256:
            raise ValueError("at most 256 DIPs per VIP")
        if self.state_count < 0 or self.arrival_rate < 0:
            raise ValueError("state_count and arrival_rate must be non-negative")
        if self.weights[0] < 0 or self.weights[1] < self.weights[0]:
            raise ValueError("weight range inverted")
        if self.threads < 1 or self.repetitions < 1:
            raise ValueError("threads and repetitions must be at least 1")

    def range(self) -> tuple[int, int]:
        equal, varied = NET_SCALES[self.net]
        if self.dist == "dip-e":
            n = self.dips_per_vip or equal
            return n, n
        return self.dip_range or varied

    def as_dict(self) -> dict:
        return asdict(self)


def make_pools(spec: WorkloadSpec, rng: np.random.Generator) -> list[DipPool]:
    lo, hi = spec.range()
    counts = np.full(spec.vip_count, lo) if lo == hi else rng.integers(lo, hi + 1, spec.vip_count)
    pools = []
    for v, c in enumerate(counts):
        w = rng.integers(spec.weights[0], spec.weights[1] + 1, int(c))
        if spec.zero_weight:
            w[rng.choice(int(c), size=min(spec.zero_weight, int(c) - 1), replace=False)] = 0
        if w.sum() == 0:
            w[0] = 1
        pools.append(DipPool(v, [Dip(dip_address(v, j), DIP_PORT, int(w[j])) for j in range(int(c))]))
    return pools


def needed_dip_bits(pools: list[DipPool], slack: int = 0) -> int:
    total = sum(len(p.dips) for p in pools) + slack
    return max(12, math.ceil(math.log2(max(total, 2))))


def pool_codes(pool: DipPool) -> np.ndarray:
    return endpoint_code([d.address for d in pool.dips], [d.port for d in pool.dips]).astype(np.int64)


def assign_by_weight(pools: list[DipPool], vidx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Endpoint code per state, drawn in proportion to its VIP pool's weights."""
    codes = np.full(vidx.shape[0], -1, dtype=np.int64)
    for p in pools:
        sel = np.flatnonzero(vidx == p.vip_index)
        w = np.array([float(d.weight) for d in p.dips])
        codes[sel] = pool_codes(p)[rng.choice(len(p.dips), size=sel.shape[0], p=w / w.sum())]
    return codes


def make_states(spec: WorkloadSpec, pools: list[DipPool], rng: np.random.Generator, count: int | None = None,
                key_seed: int | None = None):
    """Keys spread uniformly over VIPs, each with a weight-proportional DIP.

    Returns (keys, vip index per key, endpoint code per key).
    """
    count = spec.state_count if count is None else count
    vips = [vip_address(p.vip_index) for p in pools]
    keys = lfsr_keys(key_seed if key_seed is not None else spec.rng_seed * 7919 + 1, count, vips)
    vidx = keys[:, 7].astype(np.int64)
    return keys, vidx, assign_by_weight(pools, vidx, rng)
