from __future__ import annotations

import time

import numpy as np
import pytest

from othello_lb.hashing import hash_keys
from othello_lb.othello import Othello
from othello_lb.othellomap import OthelloMap, StateRecord, cp_memory_bits, index_width, min_log2m

from conftest import random_keys


def check_against(ref: dict, om: OthelloMap) -> None:
    assert len(om) == len(ref)
    keys, dips, dcodes = om.records()
    assert {bytes(k): (int(d), int(c)) for k, d, c in zip(keys, dips, dcodes)} == ref
    if ref:
        idx = om.index_batch(keys)
        assert np.array_equal(idx, np.arange(len(ref)))


def five_state_map():
    keys = random_keys(5, seed=21)
    om = OthelloMap(l_d=4, seed=1)
    for j, k in enumerate(keys):
        om.insert(k, 2 if j == 0 else j, j)
    return om, keys


def test_first_state_resolves_to_index_zero():
    om, keys = five_state_map()
    o = om.o
    mask = np.uint32(o.m - 1)
    ha = int(hash_keys(keys[:1], o.seed_a)[0] & mask)
    hb = int(hash_keys(keys[:1], o.seed_b)[0] & mask)
    assert int(o.a[ha]) ^ int(o.b[hb]) == 0
    assert om.query(keys[0]) == StateRecord(bytes(keys[0]), 2, 0)


def test_delete_moves_last_record_into_hole():
    om, keys = five_state_map()
    assert om.delete(keys[1])
    assert len(om) == 4
    assert bytes(om.keys[1]) == bytes(keys[4])
    assert om.o.lookup(keys[4]) == 1
    assert om.query(keys[1]) is None
    assert om.query(keys[4]) == StateRecord(bytes(keys[4]), 4, 4)


def test_empty_map():
    om = OthelloMap(seed=1)
    assert len(om) == 0
    assert om.query(random_keys(1, seed=1)[0]) is None
    s = om.generate_dataplane(12)
    assert s.width == 12
    assert (s.lookup_batch(random_keys(100, seed=2)) < 4096).all()
    assert om.o.log2m >= min_log2m(12)


def test_absent_keys_miss_despite_arbitrary_othello_answer(rng):
    keys = random_keys(11_000, seed=22)
    om = OthelloMap.from_records(keys[:10_000], rng.integers(0, 100, 10_000), rng.integers(0, 4096, 10_000),
                                 seed=2)
    assert (om.index_batch(keys[10_000:]) == -1).all()
    assert keys[10_500].tobytes() not in om
    assert keys[5].tobytes() in om


def test_insert_into_empty_and_reinsert():
    om = OthelloMap(seed=3)
    k = random_keys(1, seed=23)[0]
    assert om.insert(k, 7, 100) is False
    assert om.query(k) == StateRecord(bytes(k), 7, 100)
    assert om.insert(k, 9, 101) is True
    assert len(om) == 1
    assert om.query(k) == StateRecord(bytes(k), 9, 101)


def test_insert_rejects_wide_dcode():
    om = OthelloMap(l_d=4, seed=3)
    with pytest.raises(ValueError):
        om.insert(random_keys(1, seed=24)[0], 1, 16)


def test_interleaved_insert_delete_matches_reference(rng):
    om = OthelloMap(seed=4)
    pool = random_keys(3000, seed=25)
    ref: dict = {}
    for step in range(20_000):
        k = pool[rng.integers(0, pool.shape[0])]
        if rng.random() < 0.6:
            d, c = int(rng.integers(0, 1000)), int(rng.integers(0, 4096))
            om.insert(k, d, c)
            ref[bytes(k)] = (d, c)
        else:
            assert om.delete(k) == (ref.pop(bytes(k), None) is not None)
        if step % 2000 == 0:
            check_against(ref, om)
    check_against(ref, om)


def test_batch_insert_grows_index_width(rng):
    n = 70_000
    keys = random_keys(n, seed=26)
    om = OthelloMap(seed=5)
    om.insert_many(keys, rng.integers(0, 50, n), rng.integers(0, 4096, n))
    assert len(om) == n
    assert om.l_i == index_width(om.capacity) >= 17
    assert np.array_equal(om.index_batch(keys), np.arange(n))
    om.delete_many(keys[: n // 2])
    assert len(om) == n - n // 2
    assert (om.index_batch(keys[: n // 2]) == -1).all()


def test_generate_dataplane_returns_stored_dcodes(rng):
    keys = random_keys(5, seed=27)
    om = OthelloMap(l_d=6, seed=6)
    dc = [3, 17, 63, 0, 42]
    for k, c in zip(keys, dc):
        om.insert(k, 1, c)
    s = om.generate_dataplane()
    assert list(s.lookup_batch(keys)) == dc
    assert (s.seed_a, s.seed_b) == (om.o.seed_a, om.o.seed_b)


def test_set_dcodes_then_regenerate(rng):
    keys = random_keys(2000, seed=28)
    om = OthelloMap.from_records(keys, np.zeros(2000), rng.integers(0, 4096, 2000), seed=7)
    om.set_dcodes([0, 5], [11, 12])
    s = om.generate_dataplane()
    assert np.array_equal(s.lookup_batch(keys), om.dcodes[:2000])
    assert s.lookup(keys[5]) == 12


def test_regeneration_faster_than_rebuild(rng):
    n = 32_768
    keys = random_keys(n, seed=29)
    dcodes = rng.integers(0, 4096, n, dtype=np.uint32)
    om = OthelloMap.from_records(keys, np.zeros(n), dcodes, seed=8)
    om.generate_dataplane()
    Othello.build(keys[:100], dcodes[:100], 12, seed=1)
    t0 = time.perf_counter()
    om.generate_dataplane()
    regen = time.perf_counter() - t0
    t0 = time.perf_counter()
    Othello.build(keys, dcodes, 12, seed=2)
    scratch = time.perf_counter() - t0
    assert scratch >= 1.5 * regen


def test_snapshot_roundtrip(rng):
    keys = random_keys(5000, seed=30)
    om = OthelloMap.from_records(keys, rng.integers(0, 100, 5000), rng.integers(0, 4096, 5000), seed=9)
    om.delete_many(keys[:100])
    back = OthelloMap.from_bytes(om.to_bytes(), seed=1)
    check_against({bytes(k): (int(d), int(c)) for k, d, c in zip(*om.records())}, back)
    back.insert(keys[0], 1, 1)
    assert back.query(keys[0]).dip_index == 1


def test_memory_accounting():
    assert cp_memory_bits(1000, 10, 12) == pytest.approx(2.33 * 10 * 1000 + (120 + 12) * 1000)
    om = OthelloMap(seed=10)
    om.insert_many(random_keys(100, seed=31), np.zeros(100), np.zeros(100))
    assert om.memory_bits() == pytest.approx(cp_memory_bits(100, om.l_i, 12))
