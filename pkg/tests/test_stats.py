from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from othello_lb.harness.stats import (
    chi2_critical,
    chi_squared_uniform,
    enumerate_dcode_distribution,
    ks_critical,
    ks_uniform,
    load_balance_measure,
    xor_convolve,
)
from othello_lb.othello import Othello
from othello_lb.harness.lfsr import lfsr_keys

scipy_stats = pytest.importorskip("scipy.stats")


def test_equal_counts_pass_with_zero_statistic():
    for fn in (chi_squared_uniform, ks_uniform):
        r = fn(np.full(4096, 256))
        assert r.statistic == 0 and r.passed


def test_degenerate_counts_fail():
    c = np.zeros(4096)
    c[0] = 1 << 20
    assert not chi_squared_uniform(c).passed
    assert not ks_uniform(c).passed


def test_bad_input():
    for bad in ([], [5], [0, 0]):
        with pytest.raises(ValueError):
            chi_squared_uniform(bad)


@pytest.mark.parametrize("df", [1, 15, 4095])
def test_chi2_critical_close_to_exact(df):
    rel = 0.06 if df == 1 else 0.002
    assert chi2_critical(df) == pytest.approx(scipy_stats.chi2.ppf(0.95, df), rel=rel)


def test_ks_critical_value():
    assert ks_critical(10_000) == pytest.approx(0.01358, abs=1e-5)


def test_chi2_statistic_matches_scipy():
    c = np.random.default_rng(0).poisson(100, 1024)
    assert chi_squared_uniform(c).statistic == pytest.approx(scipy_stats.chisquare(c).statistic)


def test_ks_statistic_matches_scipy_on_binned_sample():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 64, 20_000)
    c = np.bincount(x, minlength=64)
    # binned CDF above uniform shows at upper bin edges, below it at lower edges
    above = scipy_stats.kstest((x + 1) / 64, "uniform", alternative="greater").statistic
    below = scipy_stats.kstest(x / 64, "uniform", alternative="less").statistic
    ref = max(above, below)
    assert ks_uniform(c).statistic == pytest.approx(ref, abs=1e-9)


def test_false_rejection_rate_near_alpha():
    rng = np.random.default_rng(2)
    fails = sum(not chi_squared_uniform(rng.multinomial(1 << 16, [1 / 256] * 256)).passed for _ in range(400))
    assert 0.02 < fails / 400 < 0.09


def test_xor_convolve_brute_force():
    rng = np.random.default_rng(3)
    a, b = rng.integers(0, 50, 16), rng.integers(0, 50, 16)
    ref = np.zeros(16, dtype=np.int64)
    for x in range(16):
        for y in range(16):
            ref[x ^ y] += a[x] * b[y]
    assert np.array_equal(xor_convolve(a, b), ref)


def test_enumeration_all_zero_arrays():
    o = SimpleNamespace(width=4, a=np.zeros(8, np.uint32), b=np.zeros(8, np.uint32))
    e = enumerate_dcode_distribution(o)
    assert e.counts[0] == 64 and e.counts[1:].sum() == 0 and e.pairs == 64 and e.determined == 0


def test_enumeration_matches_pairwise_lookup():
    n = 96
    o = Othello.build(lfsr_keys(5, n), np.arange(n) % 16, 4, m=128, seed=1)
    e = enumerate_dcode_distribution(o, n)
    ref = np.bincount((o.a[:, None] ^ o.b[None, :]).ravel().astype(np.int64), minlength=16)
    assert np.array_equal(e.counts, ref)
    assert e.determined_fraction == pytest.approx(96 / 128 ** 2)
    assert e.summary()["mean"] == pytest.approx(128 ** 2 / 16)


def test_load_balance_measure():
    assert load_balance_measure([10, 20, 30], [1, 2, 3]) == 1.0
    assert load_balance_measure([10, 10, 0], [1, 1, 0]) == 1.0
    assert load_balance_measure([30, 10], [1, 1]) == 1.5
    assert load_balance_measure([0, 0], [1, 1]) == float("inf")
