"""Command-line entry point: ``bench run|uniformity|enumerate|loadbalance|stats``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from ..othello import Othello
from .bench import ALGORITHMS, run_benchmark, run_uniformity, simulate_load_balance
from .lfsr import lfsr_keys
from .stats import chi_squared_uniform, enumerate_dcode_distribution, ks_uniform
from .workload import WorkloadSpec

log = logging.getLogger("bench")


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, default=float)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
        log.info("wrote %s", out)
    else:
        print(text)


def cmd_run(args) -> int:
    spec = WorkloadSpec(net=args.net, dist=args.dist, vip_count=args.vips, state_count=args.states,
                        arrival_rate=args.arrival_rate, pool_change_period=args.pool_change_period,
                        threads=args.threads, repetitions=args.repetitions, window=args.window,
                        phases=args.phases, l_d=args.ld, rng_seed=args.seed)
    try:
        spec.validate()
    except ValueError as e:
        log.error("%s", e)
        return 2
    report = run_benchmark(spec, args.algo)
    if args.out:
        report.to_json(args.out)
        log.info("wrote %s", args.out)
    else:
        _emit(report.to_dict(), None)
    if args.series:
        report.write_series_csv(args.series)
    tp = report.throughput["single"]["lookups_per_s"]
    log.info("%s: %.2f M lookups/s, violations %d, false hits %d", args.algo, tp / 1e6,
             report.counters["pcc_violations"], report.counters["false_hits"])
    return 0


def cmd_uniformity(args) -> int:
    res = run_uniformity(args.ld, args.trials, args.states, args.keys, args.alpha, args.seed)
    if not args.rows:
        res.pop("rows")
    _emit(res, args.out)
    return 0


def cmd_enumerate(args) -> int:
    rng = np.random.default_rng(args.seed)
    n = int(0.75 * args.m) if args.n is None else args.n
    keys = lfsr_keys(args.seed * 31 + 7, n)
    o = Othello.build(keys, rng.integers(0, 1 << args.l, n, dtype=np.uint32), args.l, m=args.m, seed=rng)
    e = enumerate_dcode_distribution(o)
    out = {"m": o.m, "l": args.l, "n": n, "pairs": e.pairs, "determined_fraction": e.determined_fraction,
           **e.summary()}
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dcode", "count"])
            w.writerows(enumerate(e.counts.tolist()))
    _emit(out, args.out)
    return 0


def cmd_loadbalance(args) -> int:
    res = simulate_load_balance(dips=args.dips, rate=args.rate, lifetime=args.lifetime, duration=args.duration,
                                shock_at=args.shock_at, seed=args.seed)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "measure"])
            w.writerows(zip(res["times"], res["measure"]))
    res.pop("times")
    res.pop("measure")
    _emit(res, args.out)
    return 0


def _read_counts(path: str, column: str | None) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    head = rows[0]
    try:
        [float(x) for x in head]
        body = rows
        col = 0 if column is None else int(column)
    except ValueError:
        body = rows[1:]
        col = len(head) - 1 if column is None else (head.index(column) if column in head else int(column))
    return np.array([float(r[col]) for r in body if r], dtype=np.float64)


def cmd_stats(args) -> int:
    try:
        counts = _read_counts(args.file, args.column)
        fn = chi_squared_uniform if args.test == "chi2" else ks_uniform
        r = fn(counts, args.alpha)
    except ValueError as e:
        log.error("%s", e)
        return 2
    _emit({"test": args.test, "bins": int(counts.shape[0]), "statistic": r.statistic, "critical": r.critical,
           "passed": r.passed}, None)
    return 0 if r.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Load balancer benchmarks and statistics")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="build, verify and time one load balancer")
    r.add_argument("--algo", choices=ALGORITHMS, default="othello")
    r.add_argument("--net", choices=("small", "large"), default="small")
    r.add_argument("--dist", choices=("dip-e", "dip-v"), default="dip-e")
    r.add_argument("--states", type=int, default=100_000)
    r.add_argument("--vips", type=int, default=128)
    r.add_argument("--arrival-rate", type=float, default=0.0)
    r.add_argument("--pool-change-period", type=float, default=0.0)
    r.add_argument("--phases", type=int, default=10)
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--repetitions", type=int, default=3)
    r.add_argument("--window", type=float, default=0.5, help="seconds per throughput window")
    r.add_argument("--ld", type=int, default=12)
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--out", help="JSON report path (stdout if omitted)")
    r.add_argument("--series", help="CSV path for the throughput time series")
    r.set_defaults(fn=cmd_run)

    u = sub.add_parser("uniformity", help="chi-squared and KS failure rates of new-key Dcodes")
    u.add_argument("--ld", type=int, default=12)
    u.add_argument("--trials", type=int, default=100)
    u.add_argument("--states", type=int, default=12288)
    u.add_argument("--keys", type=int, default=1 << 20)
    u.add_argument("--alpha", type=float, default=0.05)
    u.add_argument("--seed", type=int, default=1)
    u.add_argument("--rows", action="store_true", help="include per-trial rows")
    u.add_argument("--out")
    u.set_defaults(fn=cmd_uniformity)

    e = sub.add_parser("enumerate", help="exact Dcode distribution over all array position pairs")
    e.add_argument("--m", type=int, default=1024)
    e.add_argument("--l", type=int, default=10)
    e.add_argument("--n", type=int, help="stored keys (default 0.75 m)")
    e.add_argument("--seed", type=int, default=1)
    e.add_argument("--csv", help="per-Dcode counts")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_enumerate)

    lb = sub.add_parser("loadbalance", help="load-balance measure over time across a weight shock")
    lb.add_argument("--dips", type=int, default=128)
    lb.add_argument("--rate", type=float, default=400_000)
    lb.add_argument("--lifetime", type=float, default=0.5)
    lb.add_argument("--duration", type=float, default=8.0)
    lb.add_argument("--shock-at", type=float, default=4.0)
    lb.add_argument("--seed", type=int, default=1)
    lb.add_argument("--csv")
    lb.add_argument("--out")
    lb.set_defaults(fn=cmd_loadbalance)

    s = sub.add_parser("stats", help="uniformity test of a column of counts in a CSV file")
    s.add_argument("test", choices=("chi2", "ks"))
    s.add_argument("file")
    s.add_argument("--column", help="column name or index (default: last column)")
    s.add_argument("--alpha", type=float, default=0.05)
    s.set_defaults(fn=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
