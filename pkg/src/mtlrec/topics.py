"""Topic representations, K-means topic discovery and cosine-threshold assignment."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateRepresentationError

DISTANCE_FLOOR = 1e-12


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def combine_blocks(*blocks: np.ndarray) -> np.ndarray:
    """Normalize each block row-wise, concatenate, then normalize the whole row.

    Every non-zero block ends up with the same share of the final norm.
    """
    blocks = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in blocks]
    joined = np.concatenate([_unit_rows(b) for b in blocks], axis=1)
    norms = np.linalg.norm(joined, axis=1)
    if np.any(norms == 0):
        bad = int(np.flatnonzero(norms == 0)[0])
        raise DegenerateRepresentationError(f"row {bad}: every representation block is zero")
    return joined / norms[:, None]


def build_topic_representation(tag_rep: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Topic representation of one video from its mean tag embedding and joint representation."""
    return combine_blocks(tag_rep, z)[0]


def topic_representations(tag_reps: np.ndarray, z: np.ndarray) -> np.ndarray:
    return combine_blocks(tag_reps, z)


@dataclass
class TopicModel:
    centers: np.ndarray
    threshold: float
    inertia: float = 0.0
    inertia_curve: list[float] = field(default_factory=list)
    seed: int = 0
    labels: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def num_topics(self) -> int:
        return len(self.centers)

    def __eq__(self, other):
        if not isinstance(other, TopicModel):
            return NotImplemented
        return (np.array_equal(self.centers, other.centers) and self.threshold == other.threshold
                and self.inertia == other.inertia and self.inertia_curve == other.inertia_curve
                and self.seed == other.seed)


def _sq_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(remaining[rng.integers(len(remaining))])
        chosen.append(idx)
        closest = np.minimum(closest, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def lloyd(x: np.ndarray, centers: np.ndarray, max_iters: int):
    """Lloyd iterations until the assignment stops changing; returns centers, labels, inertia curve."""
    labels = None
    curve = []
    for _ in range(max_iters):
        d = _sq_distances(x, centers)
        new_labels = d.argmin(axis=1)
        cost = d[np.arange(len(x)), new_labels]
        curve.append(float(((x - centers[new_labels]) ** 2).sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=len(centers))
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centers = centers.copy()
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        for c in np.flatnonzero(~nonempty):
            far = int(cost.argmax())
            centers[c] = x[far]
            cost[far] = 0.0
    d = _sq_distances(x, centers)
    labels = d.argmin(axis=1)
    return centers, labels, curve


def fit_kmeans(representations: np.ndarray, k: int, max_iters: int = 100, seed: int = 0,
               restarts: int = 20, threshold: float = 0.6, normalize_centers: bool = True) -> TopicModel:
    """k-means++ seeded Lloyd, best of ``restarts`` by inertia."""
    x = np.asarray(representations, dtype=np.float64)
    if k < 1 or len(x) < k:
        raise ValueError(f"K-means needs at least K={k} points, got {len(x)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers, labels, curve = lloyd(x, _kmeanspp(x, k, rng), max_iters)
        inertia = float(((x - centers[labels]) ** 2).sum())
        if best is None or inertia < best[0]:
            best = (inertia, centers, labels, curve)
    inertia, centers, labels, curve = best
    if normalize_centers:
        centers = _unit_rows(centers)
    return TopicModel(centers, threshold, inertia, curve, seed, labels)


@dataclass(frozen=True)
class TopicAssignment:
    video_id: int
    topic_ids: tuple[int, ...]
    similarities: tuple[float, ...]


def assign_topics(rep: np.ndarray, model: TopicModel, max_topics: int = 8, video_id: int = -1) -> TopicAssignment:
    """Nearest center always; further centers whose cosine similarity reaches the threshold."""
    rep = np.asarray(rep, dtype=np.float64)
    norm = np.linalg.norm(rep)
    centers = _unit_rows(model.centers)
    sims = centers @ rep / norm if norm > 0 else np.zeros(len(centers))
    order = np.lexsort((np.arange(len(sims)), -sims))
    chosen = [int(order[0])]
    for t in order[1:]:
        if len(chosen) >= max_topics or sims[t] < model.threshold:
            break
        chosen.append(int(t))
    return TopicAssignment(video_id, tuple(chosen), tuple(float(sims[t]) for t in chosen))


def assign_all(representations: np.ndarray, video_ids: Sequence[int], model: TopicModel,
               max_topics: int = 8) -> dict[int, TopicAssignment]:
    return {int(v): assign_topics(r, model, max_topics, int(v)) for v, r in zip(video_ids, representations)}


def distance_ratio(representations: np.ndarray, class_labels: Sequence[int], chunk: int = 512) -> float:
    """Mean inter-class over mean intra-class cosine distance (classes with < 2 members dropped)."""
    x = np.asarray(representations, dtype=np.float64)
    labels = np.asarray(class_labels)
    values, counts = np.unique(labels, return_counts=True)
    keep = np.isin(labels, values[counts >= 2])
    if len(values[counts >= 2]) < 2:
        raise ValueError("distance_ratio needs at least two classes with two or more members")
    x, labels = _unit_rows(x[keep]), labels[keep]
    n = len(x)
    intra_sum = inter_sum = 0.0
    intra_pairs = inter_pairs = 0
    for start in range(0, n, chunk):
        rows = slice(start, min(n, start + chunk))
        dist = np.maximum(1.0 - x[rows] @ x.T, 0.0)
        same = labels[rows, None] == labels[None, :]
        upper = np.arange(start, rows.stop)[:, None] < np.arange(n)[None, :]
        intra = same & upper
        inter = ~same & upper
        intra_sum += float(dist[intra].sum())
        inter_sum += float(dist[inter].sum())
        intra_pairs += int(intra.sum())
        inter_pairs += int(inter.sum())
    return (inter_sum / inter_pairs + DISTANCE_FLOOR) / (intra_sum / intra_pairs + DISTANCE_FLOOR)
