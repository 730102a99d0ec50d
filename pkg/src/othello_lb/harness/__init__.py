"""Workloads, oracles, statistics and the benchmark driver."""
