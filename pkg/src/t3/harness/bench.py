"""Latency and reader-scaling benchmarks.

Medians over ``ops`` operations after ``warmup`` untimed ones.  Reader
contexts are forked processes sharing the snapshot copy-on-write, so the
measurement is not throttled by the interpreter lock.
"""

from __future__ import annotations

import csv
import io
import multiprocessing as mp
import os
import random
import statistics
import time
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

from t3.oram.oram import Oram, OramSnapshot, read_once
from t3.oram.params import OramParams, Strategy


@dataclass
class LatencyRow:
    n: int
    strategy: str
    z: int
    payload: int
    standard_ms: float
    read_once_ms: float

    @property
    def ratio(self) -> float:
        return self.read_once_ms / self.standard_ms


@dataclass
class ScalingRow:
    n: int
    strategy: str
    contexts: int
    ops: int
    seconds: float

    @property
    def throughput(self) -> float:
        return self.ops / self.seconds


def default_z(strategy: Strategy) -> int:
    return 4 if strategy is Strategy.PATH else 2


def build(n: int, strategy: Strategy, payload: int = 68, seed: int = 0) -> Oram:
    return Oram(OramParams(n, bucket_z=default_z(strategy), payload_bytes=payload,
                           strategy=strategy), seed=seed)


def _median_ms(fn, bids: Sequence[int], warmup: int) -> float:
    for b in bids[:warmup]:
        fn(b)
    times = []
    for b in bids[warmup:]:
        t0 = time.perf_counter()
        fn(b)
        times.append(time.perf_counter() - t0)
    return statistics.median(times) * 1e3


def latency(n: int, strategy: Strategy, ops: int = 1000, warmup: int = 100,
            payload: int = 68, seed: int = 0, oram: Optional[Oram] = None) -> LatencyRow:
    """Standard access on the live tree, then read-once on a frozen view of
    the same tree (distinct bids, as within one interval)."""
    o = oram or build(n, strategy, payload, seed)
    rng = random.Random(seed)
    bids = rng.sample(range(n), min(n, ops + warmup))
    std = _median_ms(o.read, bids, warmup)
    snap = o.snapshot(copy=False)
    bids = rng.sample(range(n), min(n, ops + warmup))
    ro = _median_ms(lambda b: read_once(snap, b), bids, warmup)
    return LatencyRow(n, strategy.value, o.params.bucket_z, o.params.payload_bytes, std, ro)


_SNAP: Optional[OramSnapshot] = None


def _reader(args) -> int:
    bids = args
    for b in bids:
        read_once(_SNAP, b)
    return len(bids)


def reader_scaling(n: int, strategy: Strategy, contexts: Sequence[int] = (1, 2, 4),
                   ops_per_context: int = 1000, payload: int = 68, seed: int = 0,
                   oram: Optional[Oram] = None) -> List[ScalingRow]:
    """Each context performs ``ops_per_context`` read-once lookups; throughput
    is total lookups over wall time."""
    global _SNAP
    o = oram or build(n, strategy, payload, seed)
    _SNAP = o.snapshot(copy=False)
    rng = random.Random(seed)
    ctx = mp.get_context("fork")
    rows = []
    try:
        for k in contexts:
            work = [rng.sample(range(n), min(n, ops_per_context)) for _ in range(k)]
            with ctx.Pool(k) as pool:
                pool.map(_reader, [w[:10] for w in work])  # warm the workers
                t0 = time.perf_counter()
                done = sum(pool.map(_reader, work))
                dt = time.perf_counter() - t0
            rows.append(ScalingRow(n, strategy.value, k, done, dt))
    finally:
        _SNAP = None
    return rows


def scaling_ratio(rows: Sequence[ScalingRow], k: int = 4) -> float:
    base = next(r for r in rows if r.contexts == 1)
    top = next(r for r in rows if r.contexts == k)
    return top.throughput / base.throughput


def cpu_count() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def to_csv(rows: Sequence[object]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    dicts = []
    for r in rows:
        d = asdict(r)
        for extra in ("ratio", "throughput"):
            if hasattr(r, extra):
                d[extra] = round(getattr(r, extra), 4)
        dicts.append(d)
    w = csv.DictWriter(buf, fieldnames=list(dicts[0]))
    w.writeheader()
    w.writerows(dicts)
    return buf.getvalue()
