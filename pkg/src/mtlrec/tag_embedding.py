"""Tag co-occurrence graph, weighted random walks and skip-gram tag embeddings."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .config import WalkConfig
from .corpus import Video
from .errors import EmptyGraphError
from .nn import scatter_rows, sigmoid


@dataclass
class TagGraph:
    """Undirected weighted graph; edge weight = number of videos holding both tags."""

    num_tags: int
    edge_a: np.ndarray
    edge_b: np.ndarray
    weights: np.ndarray
    # CSR adjacency used by the walker
    indptr: np.ndarray = field(repr=False)
    neighbors: np.ndarray = field(repr=False)
    transition: np.ndarray = field(repr=False)

    @property
    def probabilities(self) -> np.ndarray:
        """Each edge's share of the total edge weight."""
        return self.weights / self.weights.sum()

    @property
    def num_edges(self) -> int:
        return len(self.weights)

    def edges(self) -> dict[tuple[int, int], int]:
        return {(int(a), int(b)): int(w) for a, b, w in zip(self.edge_a, self.edge_b, self.weights)}

    def degree(self, tag: int) -> int:
        return int(self.indptr[tag + 1] - self.indptr[tag])

    def transitions(self, tag: int) -> dict[int, float]:
        lo, hi = self.indptr[tag], self.indptr[tag + 1]
        return {int(n): float(p) for n, p in zip(self.neighbors[lo:hi], self.transition[lo:hi])}

    @classmethod
    def from_edges(cls, num_tags: int, edges: dict[tuple[int, int], int]) -> "TagGraph":
        items = sorted((min(a, b), max(a, b), w) for (a, b), w in edges.items() if w > 0 and a != b)
        if not items:
            raise EmptyGraphError("tag graph has no edges: no video carries two or more tags")
        a = np.array([i[0] for i in items], dtype=np.int64)
        b = np.array([i[1] for i in items], dtype=np.int64)
        w = np.array([i[2] for i in items], dtype=np.float64)
        num_tags = max(num_tags, int(b.max()) + 1)
        src = np.concatenate([a, b])
        dst = np.concatenate([b, a])
        ww = np.concatenate([w, w])
        order = np.lexsort((dst, src))
        src, dst, ww = src[order], dst[order], ww[order]
        indptr = np.zeros(num_tags + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        indptr = np.cumsum(indptr)
        row_sum = np.add.reduceat(ww, indptr[:-1][np.diff(indptr) > 0])
        totals = np.zeros(num_tags)
        totals[np.diff(indptr) > 0] = row_sum
        transition = ww / totals[src]
        return cls(num_tags, a, b, w, indptr, dst, transition)


def build_tag_graph(videos: Iterable[Video], num_tags: int = 0) -> TagGraph:
    counts: Counter = Counter()
    top = num_tags
    for v in videos:
        tags = sorted(set(v.tags))
        if tags:
            top = max(top, tags[-1] + 1)
        counts.update(combinations(tags, 2))
    return TagGraph.from_edges(top, dict(counts))


def random_walks(graph: TagGraph, config: WalkConfig, seed: int) -> list[list[int]]:
    """``walks_per_node`` walks of length ``walk_length`` from every non-isolated tag."""
    config.validate()
    rng = np.random.default_rng(seed)
    starts = np.flatnonzero(np.diff(graph.indptr) > 0)
    # row r occupies keys (r, r + 1]; a uniform offset then selects the next node by searchsorted
    row_of_slot = np.repeat(np.arange(graph.num_tags), np.diff(graph.indptr))
    keys = row_of_slot + _row_cumsum(graph)
    walks = []
    for _ in range(config.walks_per_node):
        current = starts.copy()
        steps = [current]
        for _ in range(config.walk_length - 1):
            u = rng.random(len(current))
            slot = np.searchsorted(keys, current + u, side="right")
            slot = np.minimum(slot, graph.indptr[current + 1] - 1)
            current = graph.neighbors[slot]
            steps.append(current)
        walks.extend(np.stack(steps, axis=1).tolist())
    return walks


def _row_cumsum(graph: TagGraph) -> np.ndarray:
    out = np.empty_like(graph.transition)
    for r in np.flatnonzero(np.diff(graph.indptr) > 0):
        lo, hi = graph.indptr[r], graph.indptr[r + 1]
        c = np.cumsum(graph.transition[lo:hi])
        c[-1] = 1.0
        out[lo:hi] = c
    return out


@dataclass
class TagEmbeddingTable:
    vectors: np.ndarray  # row = tag id
    loss_curve: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def num_tags(self) -> int:
        return self.vectors.shape[0]

    def __contains__(self, tag: int) -> bool:
        return 0 <= tag < self.num_tags

    def __getitem__(self, tag: int) -> np.ndarray:
        if tag not in self:
            raise KeyError(f"tag {tag} has no embedding")
        return self.vectors[tag]

    def __eq__(self, other):
        if not isinstance(other, TagEmbeddingTable):
            return NotImplemented
        return np.array_equal(self.vectors, other.vectors)


def skipgram_pairs(walks: Sequence[Sequence[int]], window: int) -> tuple[np.ndarray, np.ndarray]:
    centers, contexts = [], []
    for walk in walks:
        w = np.asarray(walk, dtype=np.int64)
        for offset in range(1, window + 1):
            if offset >= len(w):
                break
            centers += [w[:-offset], w[offset:]]
            contexts += [w[offset:], w[:-offset]]
    if not centers:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def skipgram_loss_and_grads(w_in: np.ndarray, w_out: np.ndarray, centers: np.ndarray,
                            contexts: np.ndarray, negatives: np.ndarray):
    """Summed negative-sampling loss and its gradients for a batch of pairs.

    ``negatives`` has shape ``(batch, k)``.
    """
    u = w_in[centers]
    v_pos = w_out[contexts]
    v_neg = w_out[negatives]
    s_pos = np.einsum("bd,bd->b", u, v_pos)
    s_neg = np.einsum("bd,bkd->bk", u, v_neg)
    loss = float(np.logaddexp(0.0, -s_pos).sum() + np.logaddexp(0.0, s_neg).sum())
    g_pos = sigmoid(s_pos) - 1.0
    g_neg = sigmoid(s_neg)
    grad_u = g_pos[:, None] * v_pos + np.einsum("bk,bkd->bd", g_neg, v_neg)
    grad_in = scatter_rows(len(w_in), centers, grad_u)
    out_rows = np.concatenate([contexts, negatives.ravel()])
    out_vals = np.concatenate([g_pos[:, None] * u, (g_neg[:, :, None] * u[:, None, :]).reshape(-1, u.shape[1])])
    return loss, grad_in, scatter_rows(len(w_out), out_rows, out_vals)



def train_skipgram(walks: Sequence[Sequence[int]], config: WalkConfig, num_tags: int | None = None,
                   seed: int | None = None) -> TagEmbeddingTable:
    """Mini-batch SGD on skip-gram with negative sampling; ``loss_curve`` holds per-epoch mean pair loss."""
    config.validate()
    if not walks:
        raise ValueError("skip-gram needs at least one walk")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    flat = np.concatenate([np.asarray(w, dtype=np.int64) for w in walks])
    T = max(int(flat.max()) + 1, num_tags or 0)
    freq = np.bincount(flat, minlength=T).astype(np.float64) ** 0.75
    noise = np.cumsum(freq / freq.sum())
    noise[-1] = 1.0
    d = config.dim
    w_in = (rng.random((T, d)) - 0.5) / d
    w_out = np.zeros((T, d))
    centers, contexts = skipgram_pairs(walks, config.window)
    n = len(centers)
    total_batches = config.epochs * -(-n // config.batch_size)
    done = 0
    curve = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            neg = np.searchsorted(noise, rng.random((len(idx), config.negatives)), side="right")
            neg = np.minimum(neg, T - 1)
            value, g_in, g_out = skipgram_loss_and_grads(w_in, w_out, centers[idx], contexts[idx], neg)
            lr = config.learning_rate * max(1e-4, 1.0 - done / total_batches)
            # a row's step is its mean pair gradient, so frequent tags do not take oversized steps
            hits_in = np.bincount(centers[idx], minlength=T)
            hits_out = np.bincount(contexts[idx], minlength=T) + np.bincount(neg.ravel(), minlength=T)
            w_in -= lr * g_in / np.maximum(hits_in, 1)[:, None]
            w_out -= lr * g_out / np.maximum(hits_out, 1)[:, None]
            epoch_loss += value
            done += 1
        curve.append(epoch_loss / n)
    return TagEmbeddingTable(w_in, curve)


def video_tag_representation(video: Video, table: TagEmbeddingTable) -> np.ndarray:
    """Mean embedding of the video's tags; zero vector when it has none."""
    if not video.tags:
        return np.zeros(table.dim)
    for t in video.tags:
        if t not in table:
            raise KeyError(f"tag {t} of video {video.video_id} missing from the embedding table")
    return table.vectors[list(video.tags)].mean(axis=0)


def tag_representations(videos: Sequence[Video], table: TagEmbeddingTable) -> np.ndarray:
    return np.array([video_tag_representation(v, table) for v in videos]).reshape(len(videos), table.dim)


def learn_tag_embeddings(videos: Sequence[Video], config: WalkConfig, num_tags: int, seed: int):
    graph = build_tag_graph(videos, num_tags)
    walks = random_walks(graph, config, seed)
    table = train_skipgram(walks, config, num_tags=graph.num_tags, seed=seed + 1)
    return graph, table
