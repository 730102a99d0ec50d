"""Uniformity statistics and exact Dcode enumeration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

__all__ = [
    "DcodeEnumeration",
    "TestResult",
    "chi2_critical",
    "chi_squared_uniform",
    "enumerate_dcode_distribution",
    "ks_critical",
    "ks_uniform",
    "load_balance_measure",
    "xor_convolve",
]


@dataclass(frozen=True)
class TestResult:
    statistic: float
    critical: float
    passed: bool


def chi2_critical(df: int, alpha: float = 0.05) -> float:
    """Upper-tail chi-squared critical value by the Wilson-Hilferty cube approximation."""
    z = NormalDist().inv_cdf(1.0 - alpha)
    t = 2.0 / (9.0 * df)
    return df * (1.0 - t + z * math.sqrt(t)) ** 3


def ks_critical(n: int, alpha: float = 0.05) -> float:
    """Asymptotic one-sample KS critical value; 1.358/sqrt(n) at alpha = 0.05."""
    return math.sqrt(-0.5 * math.log(alpha / 2.0)) / math.sqrt(n)


def _counts(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=np.float64).reshape(-1)
    if c.size == 0:
        raise ValueError("empty count vector")
    if c.size < 2:
        raise ValueError("need at least two categories")
    if c.sum() <= 0:
        raise ValueError("counts must have a positive total")
    return c


def chi_squared_uniform(counts, alpha: float = 0.05) -> TestResult:
    c = _counts(counts)
    e = c.sum() / c.size
    stat = float(((c - e) ** 2).sum() / e)
    crit = chi2_critical(c.size - 1, alpha)
    return TestResult(stat, crit, stat <= crit)


def ks_uniform(counts, alpha: float = 0.05) -> TestResult:
    """KS distance between the binned empirical CDF and the discrete uniform CDF."""
    c = _counts(counts)
    n = c.sum()
    emp = np.cumsum(c) / n
    uni = np.arange(1, c.size + 1) / c.size
    stat = float(np.abs(emp - uni).max())
    crit = ks_critical(int(round(n)), alpha)
    return TestResult(stat, crit, stat <= crit)


def _wht(x: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform (length a power of two)."""
    x = x.copy()
    h = 1
    n = x.shape[0]
    while h < n:
        x = x.reshape(-1, 2, h)
        a = x[:, 0, :].copy()
        b = x[:, 1, :]
        x[:, 0, :] = a + b
        x[:, 1, :] = a - b
        x = x.reshape(n)
        h *= 2
    return x


def xor_convolve(ha: np.ndarray, hb: np.ndarray) -> np.ndarray:
    """c[z] = sum over x ^ y = z of ha[x] * hb[y], exact in integers."""
    n = ha.shape[0]
    fa = _wht(ha.astype(np.int64))
    fb = _wht(hb.astype(np.int64))
    return _wht(fa * fb) // n


@dataclass(frozen=True)
class DcodeEnumeration:
    counts: np.ndarray
    pairs: int
    determined: int

    @property
    def determined_fraction(self) -> float:
        return self.determined / self.pairs

    def summary(self) -> dict[str, float]:
        c = self.counts
        q = np.percentile(c, [10, 90])
        return {"min": float(c.min()), "p10": float(q[0]), "mean": float(c.mean()),
                "p90": float(q[1]), "max": float(c.max()), "max_over_mean": float(c.max() / c.mean())}


def enumerate_dcode_distribution(o, n: int | None = None) -> DcodeEnumeration:
    """Tally A[i] ^ B[j] over all m_a * m_b position pairs.

    This is the exact Dcode distribution an unknown, uniformly hashed key
    faces.  Only ``n`` of the pairs are pinned by stored keys.
    """
    width = o.width
    ha = np.bincount(np.asarray(o.a, dtype=np.int64), minlength=1 << width)
    hb = np.bincount(np.asarray(o.b, dtype=np.int64), minlength=1 << width)
    if n is None:
        n = len(o) if hasattr(o, "graph") else 0
    return DcodeEnumeration(xor_convolve(ha, hb), int(o.a.shape[0] * o.b.shape[0]), int(n))


def load_balance_measure(conns, weights) -> float:
    """max(L_j) / mean(L_j) with L_j = conns_j / w_j over positive-weight DIPs."""
    conns = np.asarray(conns, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    pos = w > 0
    load = conns[pos] / w[pos]
    mean = load.mean()
    return float(load.max() / mean) if mean > 0 else float("inf")
