from __future__ import annotations

import numpy as np
import pytest

from othello_lb.controlplane import Dip, DipPool
from othello_lb.harness.oracle import Oracle
from othello_lb.harness.workload import (
    WorkloadSpec,
    assign_by_weight,
    dip_address,
    make_pools,
    make_states,
    needed_dip_bits,
    pool_codes,
)


def test_dip_e_equal_counts():
    pools = make_pools(WorkloadSpec(net="large", vip_count=128), np.random.default_rng(0))
    assert len(pools) == 128 and {len(p.dips) for p in pools} == {128}


@pytest.mark.parametrize("net,lo,hi", [("small", 8, 64), ("large", 32, 256)])
def test_dip_v_ranges(net, lo, hi):
    pools = make_pools(WorkloadSpec(net=net, dist="dip-v", vip_count=256), np.random.default_rng(1))
    sizes = [len(p.dips) for p in pools]
    assert lo <= min(sizes) and max(sizes) <= hi and len(set(sizes)) > 10


def test_addresses_unique():
    pools = make_pools(WorkloadSpec(net="large", dist="dip-v", vip_count=256), np.random.default_rng(2))
    codes = np.concatenate([pool_codes(p) for p in pools])
    assert np.unique(codes).shape == codes.shape
    assert dip_address(3, 300) == 0x0A03012C


def test_validation():
    for bad in (dict(net="huge"), dict(dist="x"), dict(vip_count=0), dict(vip_count=257),
                dict(dist="dip-v", dip_range=(5, 4)), dict(dips_per_vip=300), dict(state_count=-1),
                dict(weights=(3, 1)), dict(threads=0)):
        with pytest.raises(ValueError):
            WorkloadSpec(**bad).validate()


def test_zero_weights_and_needed_bits():
    spec = WorkloadSpec(vip_count=4, weights=(1, 4), zero_weight=2)
    pools = make_pools(spec, np.random.default_rng(3))
    assert all(sum(d.weight == 0 for d in p.dips) == 2 for p in pools)
    assert needed_dip_bits(pools) == 12
    big = make_pools(WorkloadSpec(net="large", vip_count=256), np.random.default_rng(0))
    assert needed_dip_bits(big, slack=256) == 16


def test_states_follow_weights():
    spec = WorkloadSpec(vip_count=2, dips_per_vip=2, state_count=40_000, weights=(1, 3))
    rng = np.random.default_rng(4)
    pools = make_pools(spec, rng)
    d = pools[0].dips
    pools[0] = DipPool(0, [Dip(d[0].address, d[0].port, 1), Dip(d[1].address, d[1].port, 3)])
    keys, vidx, codes = make_states(spec, pools, rng)
    assert np.unique(keys, axis=0).shape[0] == 40_000
    mine = codes[vidx == 0]
    share = (mine == pool_codes(pools[0])[1]).mean()
    assert share == pytest.approx(0.75, abs=0.02)
    assert np.isin(codes[vidx == 1], pool_codes(pools[1])).all()
    assert (assign_by_weight(pools, np.array([], dtype=np.int64), rng).shape == (0,))


def test_oracle_counts_violations_and_false_hits():
    o = Oracle()
    o.set_pool(0, [10, 11])
    o.record([0, 1], [0, 0], [10, 11])
    assert o.observe([0, 1], [10, 11]) == 0
    assert o.observe([0, 1], [11, 11]) == 1
    o.observe([5], [10], hits=np.array([True]))
    assert o.false_hits == 1
    o.record([2], [0], [99])
    assert o.cross_vip_hits == 1
    # a DIP that left the pool owes no consistency
    o.set_pool(0, [11])
    assert o.observe([0], [11]) == 0
    o.terminate([1])
    assert o.live_ids().tolist() == [0, 2]
    assert o.counters()["pcc_violations"] == 1


def test_oracle_keeps_first_assignment():
    o = Oracle(4)
    o.set_pool(0, [1, 2])
    o.record([3], [0], [1])
    o.record([3], [0], [2])
    assert o.assigned[3] == 1
