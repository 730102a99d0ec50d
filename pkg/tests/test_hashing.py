from __future__ import annotations

import numpy as np
import pytest

from othello_lb.hashing import (
    FLOW_KEY_LEN,
    FlowKey,
    as_key_array,
    flow_keys,
    hash32,
    hash_keys,
    key_vips,
    pack_flows,
)

from conftest import random_keys


def test_compiled_hash_matches_reference():
    keys = random_keys(200, 13, seed=1)
    for seed in (0, 1, 0xDEADBEEF):
        got = hash_keys(keys, seed)
        assert [int(h) for h in got] == [hash32(bytes(k), seed) for k in keys]


@pytest.mark.parametrize("key_len", [1, 8, 13, 16, 21])
def test_hash_handles_any_key_length(key_len):
    keys = random_keys(50, key_len, seed=key_len)
    assert [int(h) for h in hash_keys(keys, 7)] == [hash32(bytes(k), 7) for k in keys]


def test_seeds_give_independent_hashes():
    keys = random_keys(20000, seed=2)
    a, b = hash_keys(keys, 1), hash_keys(keys, 2)
    assert np.corrcoef(a.astype(float), b.astype(float))[0, 1] < 0.05
    assert (a == b).mean() < 0.001


def test_hash_spreads_over_buckets():
    keys = random_keys(65536, seed=3)
    counts = np.bincount(hash_keys(keys, 9) >> 24, minlength=256)
    assert counts.min() > 180 and counts.max() < 330


def test_flow_key_roundtrip():
    f = FlowKey(0x0A000001, 0xC0A80005, 1234, 80, 6)
    raw = f.pack()
    assert len(raw) == FLOW_KEY_LEN
    assert FlowKey.unpack(raw) == f


def test_pack_flows_and_vips():
    flows = [FlowKey(i, 0xC0A80000 | i, 1000 + i, 80, 6) for i in range(5)]
    keys = pack_flows(flows)
    assert keys.shape == (5, FLOW_KEY_LEN)
    assert list(key_vips(keys)) == [0xC0A80000 | i for i in range(5)]
    assert bytes(keys[3]) == flows[3].pack()


def test_flow_keys_broadcast_scalar_ports():
    keys = flow_keys(np.arange(4, dtype=np.uint32), 0xC0A80001, 5000, 443)
    assert keys.shape == (4, FLOW_KEY_LEN)
    assert FlowKey.unpack(bytes(keys[2])) == FlowKey(2, 0xC0A80001, 5000, 443, 6)


def test_as_key_array_accepts_bytes_and_rejects_bad_length():
    one = as_key_array(b"abcdefghijklm")
    assert one.shape == (1, 13)
    many = as_key_array([b"abcdefghijklm", b"nopqrstuvwxyz"])
    assert many.shape == (2, 13)
    with pytest.raises(ValueError):
        as_key_array(b"short", 13)
