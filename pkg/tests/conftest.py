from __future__ import annotations

import numpy as np
import pytest


def random_keys(n: int, key_len: int = 13, seed: int = 0) -> np.ndarray:
    """n distinct random keys."""
    rng = np.random.default_rng(seed)
    keys = rng.integers(0, 256, size=(n, key_len), dtype=np.uint8)
    _, first = np.unique(keys, axis=0, return_index=True)
    while first.shape[0] < n:
        more = rng.integers(0, 256, size=(n - first.shape[0], key_len), dtype=np.uint8)
        keys = np.vstack([keys[np.sort(first)], more])
        _, first = np.unique(keys, axis=0, return_index=True)
    return np.ascontiguousarray(keys[np.sort(first)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line; every line is repeated in the terminal summary."""

    def record(criterion: int, passed: bool, detail: str) -> bool:
        line = f"C{criterion} {'PASS' if passed else 'FAIL'}: {detail}"
        _VERDICTS.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
