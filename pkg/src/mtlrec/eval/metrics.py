"""Clustering agreement and ranking metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


def _contingency(a: Sequence, b: Sequence) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"label sequences differ in length: {len(a)} vs {len(b)}")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max(initial=-1) + 1, ib.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2


def ari(labels_a: Sequence, labels_b: Sequence) -> float:
    """Adjusted Rand index from the pair-counting contingency table."""
    table = _contingency(labels_a, labels_b)
    n = table.sum()
    if n < 2:
        return 1.0
    index = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / _comb2(n)
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(labels_a: Sequence, labels_b: Sequence) -> float:
    """Mutual information over the arithmetic mean of the two entropies (natural log)."""
    table = _contingency(labels_a, labels_b)
    n = int(table.sum())
    if n == 0:
        return 1.0
    ha = _entropy(table.sum(axis=1), n)
    hb = _entropy(table.sum(axis=0), n)
    if ha == 0 and hb == 0:
        return 1.0
    rows, cols = np.nonzero(table)
    joint = table[rows, cols] / n
    pa = table.sum(axis=1)[rows] / n
    pb = table.sum(axis=0)[cols] / n
    mi = float((joint * np.log(joint / (pa * pb))).sum())
    return max(0.0, mi / ((ha + hb) / 2))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(len(x))
    boundaries = np.flatnonzero(np.diff(sorted_x)) + 1
    starts = np.concatenate([[0], boundaries])
    stops = np.concatenate([boundaries, [len(x)]])
    for lo, hi in zip(starts, stops):
        ranks[order[lo:hi]] = (lo + hi + 1) / 2.0  # mean of 1-based ranks lo+1..hi
    return ranks


def auc(scores: Sequence[float], labels: Sequence) -> float:
    """P(positive outscores negative) + 0.5 P(tie), via average ranks."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = _average_ranks(s)
    # rank sums are multiples of 0.5, so this is exact in floating point for practical sizes
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MetricReport:
    metrics: dict[str, float]
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.metrics.items():
            if not math.isfinite(v):
                raise ValueError(f"metric {k} is not finite: {v}")

    def __getitem__(self, key: str) -> float:
        return self.metrics[key]

    def to_json(self) -> dict:
        return {"metrics": dict(sorted(self.metrics.items())), "metadata": self.metadata}
