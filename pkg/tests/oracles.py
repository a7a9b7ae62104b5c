"""Independent reference computations used by the test-suite.

Nothing here shares code with the package paths it checks.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np


def numeric_gradient(f, array, eps=1e-6):
    """Central finite differences of ``f()`` with respect to ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        old = array[idx]
        array[idx] = old + eps
        up = f()
        array[idx] = old - eps
        down = f()
        array[idx] = old
        grad[idx] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    num = np.linalg.norm(np.asarray(analytic) - np.asarray(numeric))
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(num / den)


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def pair_enumeration_ari(a, b):
    n = len(a)
    both = same_a = same_b = 0
    for i, j in itertools.combinations(range(n), 2):
        sa = a[i] == a[j]
        sb = b[i] == b[j]
        same_a += sa
        same_b += sb
        both += sa and sb
    total = n * (n - 1) / 2
    if total == 0:
        return 1.0
    expected = same_a * same_b / total
    max_index = (same_a + same_b) / 2
    if max_index == expected:
        return 1.0
    return (both - expected) / (max_index - expected)


def joint_histogram_nmi(a, b):
    n = len(a)
    joint = Counter(zip(a, b))
    ca, cb = Counter(a), Counter(b)
    mi = sum(c / n * math.log((c / n) / ((ca[x] / n) * (cb[y] / n))) for (x, y), c in joint.items())
    ha = -sum(c / n * math.log(c / n) for c in ca.values())
    hb = -sum(c / n * math.log(c / n) for c in cb.values())
    if ha == 0 and hb == 0:
        return 1.0
    return mi / ((ha + hb) / 2)


def exhaustive_kmeans_optimum(points, k=2):
    """Minimum inertia over every assignment of points to k non-empty clusters."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    best = math.inf
    for labels in itertools.product(range(k), repeat=n - 1):
        labels = (0,) + labels
        if len(set(labels)) < k:
            continue
        lab = np.array(labels)
        inertia = 0.0
        for c in range(k):
            members = points[lab == c]
            inertia += ((members - members.mean(axis=0)) ** 2).sum()
        best = min(best, inertia)
    return best
