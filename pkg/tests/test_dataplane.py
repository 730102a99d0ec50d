from __future__ import annotations

import threading

import numpy as np
import pytest

from othello_lb.dataplane import DROP, LOOKUP_COST, DataPlane, UpdateMessage, dp_memory_bits, pack_update
from othello_lb.hashing import flow_keys
from othello_lb.othello import Othello
from othello_lb.othellomap import OthelloMap

from conftest import random_keys

PREFIX = 0xC0A800


def vip_keys(n: int, vip: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    src = rng.choice(1 << 31, n, replace=False).astype(np.uint32)
    return flow_keys(src, (PREFIX << 8) | vip, rng.integers(1024, 65535, n).astype(np.uint16), 80)


def installed(n=2000, vip=3, l_d=12, seed=0):
    rng = np.random.default_rng(seed)
    keys = vip_keys(n, vip, seed)
    dcodes = rng.integers(0, 1 << l_d, n, dtype=np.uint32)
    o = Othello.build(keys, dcodes, l_d, seed=seed)
    da = rng.integers(0, 64, 1 << l_d).astype(np.uint16)
    dp = DataPlane(max_vips=16, l_d=l_d, l_v=12, vip_prefix=PREFIX)
    for i in range(64):
        dp.set_dip(i, 0x0A000000 | i, 8000 + i)
    dp.install(vip, o.structure(), da)
    return dp, keys, dcodes, da, o


def test_stored_state_reaches_its_dip():
    dp, keys, dcodes, da, _ = installed()
    idx, addr, port = dp.lookup_batch(keys)
    assert np.array_equal(idx, da[dcodes])
    assert np.array_equal(addr, 0x0A000000 | da[dcodes].astype(np.uint32))
    assert np.array_equal(port, 8000 + da[dcodes])
    assert dp.lookup_packet((PREFIX << 8) | 3, keys[7]) == (0x0A000000 | int(da[dcodes[7]]), 8000 + int(da[dcodes[7]]))


def test_new_keys_valid_and_deterministic():
    dp, _, _, da, _ = installed()
    fresh = vip_keys(10_000, 3, seed=99)
    first = dp.lookup_dips(fresh)
    assert np.isin(first, np.unique(da)).all()
    assert np.array_equal(dp.lookup_dips(fresh), first)
    assert len(np.unique(first)) > 32


def test_foreign_prefix_and_inactive_vip_drop():
    dp, _, _, _, _ = installed()
    other = flow_keys(np.arange(10, dtype=np.uint32), 0x0B000003, 1, 80)
    assert (dp.lookup_dips(other) == DROP).all()
    assert dp.lookup_packet(0x0B000003, other[0]) is None
    assert (dp.lookup_dips(vip_keys(10, 5)) == DROP).all()
    dp.remove_vip(3)
    assert (dp.lookup_dips(vip_keys(10, 3)) == DROP).all()
    assert dp.drops > 0


def test_identical_update_is_in_place_and_harmless():
    dp, keys, dcodes, da, o = installed()
    before = dp.lookup_dips(keys)
    assert dp.install(3, o.structure(), da) is True
    assert np.array_equal(dp.lookup_dips(keys), before)


def test_resized_update_gets_new_region():
    dp, keys, _, da, _ = installed(n=500)
    more = vip_keys(5000, 3, seed=5)
    dc = np.arange(5000, dtype=np.uint32) % 4096
    o = Othello.build(more, dc, 12, seed=3)
    assert dp.install(3, o.structure(), da) is False
    assert np.array_equal(dp.lookup_dips(more), da[dc])
    assert np.array_equal(dp.structure(3).a, o.a)


def test_update_validation():
    dp, _, _, da, o = installed()
    msg = UpdateMessage.from_structure(3, o.structure(), da)
    with pytest.raises(ValueError):
        dp.apply_update(UpdateMessage.from_structure(3, o.revalue(o.ev & 255, 8), np.zeros(256, np.uint16)))
    bad = UpdateMessage.from_structure(3, o.structure(), np.full(4096, 5000, np.uint16))
    with pytest.raises(ValueError):
        dp.apply_update(bad)
    msg.a = msg.a[:-1]
    with pytest.raises(ValueError):
        msg.validate()


def test_wire_format_roundtrip():
    _, keys, _, da, o = installed(n=300)
    data = pack_update(3, o.structure(), da)
    assert data[:4] == b"CNCU"
    msg = UpdateMessage.from_bytes(data)
    assert msg.vip_index == 3 and msg.l_d == 12
    assert np.array_equal(msg.da, da)
    assert np.array_equal(msg.structure().lookup_batch(keys), o.lookup_batch(keys))
    with pytest.raises(ValueError):
        UpdateMessage.from_bytes(data[:-2])
    with pytest.raises(ValueError):
        UpdateMessage.from_bytes(b"XXXX" + data[4:])


def test_many_vips_independently_addressable():
    dp = DataPlane(max_vips=256, l_d=8, l_v=12, vip_prefix=PREFIX)
    keys = {}
    for v in range(256):
        dp.set_dip(v, v, v)
        k = vip_keys(20, v, seed=v)
        o = Othello.build(k, np.full(20, 7, np.uint32), 8, seed=v)
        da = np.zeros(256, np.uint16)
        da[7] = v
        dp.install(v, o.structure(), da)
        keys[v] = k
    allk = np.vstack(list(keys.values()))
    assert np.array_equal(dp.lookup_dips(allk), np.repeat(np.arange(256), 20))


def test_lookup_cost_constant():
    assert LOOKUP_COST == {"hashes": 2, "reads": 6, "xors": 1}


def test_memory_accounting_formula():
    assert dp_memory_bits(1000, 4, 12, 12) == pytest.approx(2.33 * 12 * 1000 + 64 * 4 + 4096 * 12 * 4 + 48 * 4096)
    dp, _, _, _, _ = installed(n=1000)
    assert dp.memory_bits(1000) == pytest.approx(dp_memory_bits(1000, 1, 12, 12))
    assert dp.measured_bits() > 0


def test_readers_never_see_torn_updates():
    # two in-place updates that send every stored key to the same DIP via different Dcodes
    n = 4000
    keys = vip_keys(n, 1, seed=7)
    rng = np.random.default_rng(7)
    om = OthelloMap.from_records(keys, np.zeros(n), rng.integers(0, 4096, n), seed=7)
    da1 = rng.permutation(4096).astype(np.uint16)
    s1 = om.generate_dataplane()
    om.set_dcodes(np.arange(n), (om.dcodes[:n].astype(np.int64) + 2048) % 4096)
    s2 = om.generate_dataplane()
    da2 = np.roll(da1, 2048)
    expect = da1[s1.lookup_batch(keys)]
    assert np.array_equal(da2[s2.lookup_batch(keys)], expect)

    dp = DataPlane(max_vips=4, l_d=12, l_v=12, vip_prefix=PREFIX)
    m1, m2 = UpdateMessage.from_structure(1, s1, da1), UpdateMessage.from_structure(1, s2, da2)
    dp.apply_update(m1)
    stop = threading.Event()
    wrong = []

    def reader():
        while not stop.is_set():
            got = dp.lookup_dips(keys)
            wrong.append(int((got != expect).sum()))

    th = threading.Thread(target=reader)
    th.start()
    try:
        in_place = [dp.apply_update(m2 if i % 2 == 0 else m1) for i in range(300)]
    finally:
        stop.set()
        th.join()
    assert all(in_place)
    assert len(wrong) > 0 and sum(wrong) == 0
