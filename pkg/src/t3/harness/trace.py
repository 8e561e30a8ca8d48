"""Access-pattern analysis over logged leaf reads."""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy.stats import chisquare

TraceRow = Tuple[int, int, int, int]  # interval, bid, level, leaf


@dataclass
class UniformityReport:
    samples: int
    bins: int
    chi2: float
    p_value: float
    linked_pairs: int
    alpha: float = 0.01

    @property
    def uniform(self) -> bool:
        return self.p_value > self.alpha

    def row(self) -> Dict[str, object]:
        return {"samples": self.samples, "bins": self.bins, "chi2": round(self.chi2, 3),
                "p_value": self.p_value, "linked_pairs": self.linked_pairs,
                "uniform": self.uniform}


def leaf_histogram(leaves: Sequence[int], n_leaves: int, bins: int) -> np.ndarray:
    if n_leaves % bins:
        raise ValueError("bins must divide the number of leaves")
    width = n_leaves // bins
    counts = np.zeros(bins, dtype=np.int64)
    for leaf in leaves:
        counts[leaf // width] += 1
    return counts


def chi_square_leaves(leaves: Sequence[int], n_leaves: int, bins: int = 256) -> Tuple[float, float]:
    """Chi-square goodness of fit against the uniform distribution on leaves,
    after grouping consecutive leaves into ``bins`` equal-width bins."""
    bins = min(bins, n_leaves)
    res = chisquare(leaf_histogram(leaves, n_leaves, bins))
    return float(res.statistic), float(res.pvalue)


def linked_pairs(rows: Iterable[TraceRow], level: int = 0) -> int:
    """Reads that repeat an earlier (bid, leaf) pair within the same interval;
    an observer can link those to the same block."""
    seen: Dict[int, Counter] = defaultdict(Counter)
    pairs = 0
    for interval, bid, lv, leaf in rows:
        if lv != level:
            continue
        c = seen[interval]
        pairs += c[(bid, leaf)]
        c[(bid, leaf)] += 1
    return pairs


def analyze(rows: Sequence[TraceRow], n_leaves: int, bins: int = 256, level: int = 0,
            alpha: float = 0.01) -> UniformityReport:
    leaves = [leaf for _, _, lv, leaf in rows if lv == level]
    chi2, p = chi_square_leaves(leaves, n_leaves, bins)
    return UniformityReport(len(leaves), min(bins, n_leaves), chi2, p, linked_pairs(rows, level), alpha)


def plant_anomaly(leaves: List[int], n_leaves: int, bins: int = 256, factor: int = 10,
                  leaf: int = 0) -> List[int]:
    """Copy of ``leaves`` with ``leaf``'s bin topped up to ``factor`` times
    the expected per-bin count."""
    expected = len(leaves) / bins
    width = n_leaves // bins
    have = sum(1 for x in leaves if x // width == leaf // width)
    extra = max(0, int(round(factor * expected)) - have)
    return list(leaves) + [leaf] * extra


def write_trace(path: Union[str, Path], rows: Iterable[TraceRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["interval", "bid", "level", "leaf"])
        w.writerows(rows)


def read_trace(path: Union[str, Path]) -> List[TraceRow]:
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        return [(int(x["interval"]), int(x["bid"]), int(x["level"]), int(x["leaf"])) for x in r]
