"""ID-embedding CTR rankers with optional topic, tag and cover-feature families.

Every family is an embedding lookup (multi-valued families are mean-pooled);
the user side is the mean embedding of recently clicked video ids. The
concatenated vector feeds either a logistic regression (``lr``), a two hidden
layer network (``emlp``) or the sum of both (``wide_deep``).
"""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .config import DAY, FeatureSpec, RankerConfig
from .corpus import ClickLog, User, Video, cover_matrix
from .encoders import pad_sequences
from .errors import NumericError
from .nn import Adam, Params, params_from_json, params_to_json, scatter_rows, sigmoid, uniform_init
from .topics import TopicAssignment


class FeatureIndex:
    """Maps external ids to embedding rows; the last row of every table is the out-of-vocabulary slot."""

    def __init__(self, videos: Sequence[Video], assignments: Mapping[int, TopicAssignment | Sequence[int]],
                 user_ids: Sequence[int], num_tags: int, num_topics: int):
        self.video_ids = [v.video_id for v in videos]
        self.video_row = {v: i for i, v in enumerate(self.video_ids)}
        self.user_ids = list(user_ids)
        self.user_row = {u: i for i, u in enumerate(self.user_ids)}
        self.num_tags, self.num_topics = num_tags, num_topics
        self.video_oov, self.user_oov = len(self.video_ids), len(self.user_ids)
        tags = [[t if 0 <= t < num_tags else num_tags for t in v.tags] for v in videos] + [[]]
        self.tag_index, self.tag_mask = pad_sequences(tags)
        topics = []
        for v in videos:
            a = assignments.get(v.video_id, ())
            ids = a.topic_ids if isinstance(a, TopicAssignment) else a
            topics.append([t if 0 <= t < num_topics else num_topics for t in ids])
        self.topic_index, self.topic_mask = pad_sequences(topics + [[]])
        d_img = len(videos[0].cover_feature) if videos else 0
        self.cover = np.vstack([cover_matrix(videos).reshape(len(videos), d_img), np.zeros((1, d_img))])
        self.d_img = d_img

    def video(self, video_id: int) -> int:
        return self.video_row.get(video_id, self.video_oov)

    def user(self, user_id: int) -> int:
        return self.user_row.get(user_id, self.user_oov)

    def history_rows(self, video_ids: Sequence[int], window: int) -> list[int]:
        return [self.video(v) for v in list(video_ids)[-window:]]


@dataclass
class Samples:
    users: np.ndarray
    videos: np.ndarray
    history: np.ndarray  # (n, window) video rows, or (1, window) shared by all samples
    history_mask: np.ndarray
    labels: np.ndarray | None = None
    days: np.ndarray | None = None

    def __len__(self):
        return len(self.users)

    def take(self, idx) -> "Samples":
        pick = lambda a: None if a is None else a[idx]
        return Samples(self.users[idx], self.videos[idx], self.history[idx], self.history_mask[idx],
                       pick(self.labels), pick(self.days))


def _pad_rows(rows: Sequence[Sequence[int]], window: int) -> tuple[np.ndarray, np.ndarray]:
    index = np.zeros((len(rows), window), dtype=np.int64)
    mask = np.zeros((len(rows), window))
    for i, r in enumerate(rows):
        r = list(r)[-window:]
        index[i, :len(r)] = r
        mask[i, :len(r)] = 1.0
    return index, mask


def samples_from_log(log: ClickLog, index: FeatureIndex, window: int, prior: ClickLog | None = None) -> Samples:
    """One sample per exposure; history = clicks made before the start of the event's day."""
    recent: dict[int, deque] = {}
    if prior is not None:
        for i in np.flatnonzero(prior.clicked):
            recent.setdefault(int(prior.user_ids[i]), deque(maxlen=window)).append(index.video(int(prior.video_ids[i])))
    days = log.days
    hist_rows: list[tuple] = []
    n = len(log)
    start = 0
    while start < n:
        day = days[start]
        stop = start
        while stop < n and days[stop] == day:
            stop += 1
        snapshot = {u: tuple(q) for u, q in recent.items()}
        for i in range(start, stop):
            hist_rows.append(snapshot.get(int(log.user_ids[i]), ()))
        for i in range(start, stop):
            if log.clicked[i]:
                recent.setdefault(int(log.user_ids[i]), deque(maxlen=window)).append(index.video(int(log.video_ids[i])))
        start = stop
    hist, mask = _pad_rows(hist_rows, window)
    return Samples(np.array([index.user(int(u)) for u in log.user_ids], dtype=np.int64),
                   np.array([index.video(int(v)) for v in log.video_ids], dtype=np.int64),
                   hist, mask, log.clicked.astype(np.float64), days)


def bce(scores: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(np.asarray(scores, dtype=np.float64), 1e-12, 1 - 1e-12)
    y = np.asarray(labels, dtype=np.float64)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


def _masked_mean(table: np.ndarray, idx: np.ndarray, mask: np.ndarray):
    counts = mask.sum(axis=-1, keepdims=True)
    weights = mask / np.maximum(counts, 1.0)
    return (weights[..., None] * table[idx]).sum(axis=-2), weights


class Ranker:
    def __init__(self, variant: str, spec: FeatureSpec, index: FeatureIndex, hidden: Sequence[int] = (64, 32),
                 seed: int = 0, init_scale: float = 0.05, zero_init: bool = False):
        spec.validate()
        if variant not in ("lr", "emlp", "wide_deep"):
            raise ValueError(f"unknown ranker variant {variant!r}")
        self.variant, self.spec, self.index = variant, spec, index
        self.hidden = tuple(hidden)
        self.seed = seed
        rng = np.random.default_rng(seed)

        def table(rows, dim):
            return np.zeros((rows, dim)) if zero_init else init_scale * rng.normal(size=(rows, dim))

        p: Params = {}
        blocks: list[tuple[str, int]] = []
        if spec.user_id:
            p["emb.user"] = table(index.user_oov + 1, spec.id_dim)
            blocks.append(("user_id", spec.id_dim))
        if spec.video_id or spec.history:
            p["emb.video"] = table(index.video_oov + 1, spec.id_dim)
        if spec.history:
            blocks.append(("history", spec.id_dim))
        if spec.topics or spec.user_topics:
            p["emb.topic"] = table(index.num_topics + 1, spec.topic_dim)
        if spec.user_topics:
            blocks.append(("user_topics", spec.topic_dim))
        if spec.video_id:
            blocks.append(("video_id", spec.id_dim))
        if spec.tags:
            p["emb.tag"] = table(index.num_tags + 1, spec.tag_dim)
            blocks.append(("tags", spec.tag_dim))
        if spec.topics:
            blocks.append(("topics", spec.topic_dim))
        if spec.topic_cross and spec.topics and spec.user_topics:
            blocks.append(("topic_cross", spec.topic_dim))
        if spec.cover:
            p["cover.W"] = np.zeros((index.d_img, spec.cover_dim)) if zero_init else \
                uniform_init(rng, index.d_img, (index.d_img, spec.cover_dim))
            p["cover.b"] = np.zeros(spec.cover_dim)
            blocks.append(("cover", spec.cover_dim))
        self.blocks = blocks
        d = self.width
        if variant in ("lr", "wide_deep"):
            p["lr.w"] = np.zeros(d) if zero_init else init_scale * rng.normal(size=d)
            p["lr.b"] = np.zeros(1)
        if variant in ("emlp", "wide_deep"):
            dims = (d,) + self.hidden
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
                p[f"mlp.l{i}.W"] = np.zeros((a, b)) if zero_init else uniform_init(rng, a, (a, b))
                p[f"mlp.l{i}.b"] = np.zeros(b)
            p["mlp.out.w"] = np.zeros(dims[-1]) if zero_init else uniform_init(rng, dims[-1], dims[-1])
            p["mlp.out.b"] = np.zeros(1)
        self.params = p

    @property
    def width(self) -> int:
        """Length of the concatenated feature vector."""
        return sum(d for _, d in self.blocks)

    # features -------------------------------------------------------------

    def features(self, s: Samples):
        """Concatenated feature rows.

        A single history row is shared by every sample (one user, many
        candidates): user-side blocks are pooled once and broadcast.
        """
        P, ix = self.params, self.index
        parts, cache = [], {}
        named = {}
        n = len(s.videos)
        for name, _ in self.blocks:
            if name == "user_id":
                parts.append(P["emb.user"][s.users])
            elif name == "history":
                vec, w = _masked_mean(P["emb.video"], s.history, s.history_mask)
                cache["history"] = w
                parts.append(vec)
            elif name == "user_topics":
                rows = len(s.history)
                idx = ix.topic_index[s.history]  # (rows, window, max_topics)
                mask = ix.topic_mask[s.history] * s.history_mask[:, :, None]
                flat_idx = idx.reshape(rows, -1)
                vec, w = _masked_mean(P["emb.topic"], flat_idx, mask.reshape(rows, -1))
                cache["user_topics"] = (flat_idx, w)
                parts.append(vec)
            elif name == "video_id":
                parts.append(P["emb.video"][s.videos])
            elif name == "tags":
                vec, w = _masked_mean(P["emb.tag"], ix.tag_index[s.videos], ix.tag_mask[s.videos])
                cache["tags"] = w
                parts.append(vec)
            elif name == "topics":
                vec, w = _masked_mean(P["emb.topic"], ix.topic_index[s.videos], ix.topic_mask[s.videos])
                cache["topics"] = w
                parts.append(vec)
            elif name == "topic_cross":
                parts.append(named["user_topics"] * named["topics"])
            elif name == "cover":
                parts.append(ix.cover[s.videos] @ P["cover.W"] + P["cover.b"])
            if len(parts[-1]) != n:
                parts[-1] = np.broadcast_to(parts[-1], (n, parts[-1].shape[1]))
            named[name] = parts[-1]
        cache["named"] = named
        return np.concatenate(parts, axis=1), cache

    def feature_blocks(self, s: Samples) -> dict[str, np.ndarray]:
        x, _ = self.features(s)
        out, start = {}, 0
        for name, d in self.blocks:
            out[name] = x[:, start:start + d]
            start += d
        return out

    def _features_backward(self, s: Samples, cache, grad_x: np.ndarray, grads: Params) -> None:
        P, ix = self.params, self.index
        offsets, start = {}, 0
        for name, d in self.blocks:
            offsets[name] = (start, start + d)
            start += d
        if "topic_cross" in offsets:
            grad_x = grad_x.copy()
            a, b = offsets["topic_cross"]
            g = grad_x[:, a:b]
            named = cache["named"]
            for own, other in (("user_topics", "topics"), ("topics", "user_topics")):
                lo, hi = offsets[own]
                grad_x[:, lo:hi] += g * named[other]
        start = 0

        def acc(key, rows, values):
            update = scatter_rows(len(P[key]), rows, values)
            grads[key] = grads[key] + update if key in grads else update

        for name, d in self.blocks:
            g = grad_x[:, start:start + d]
            start += d
            if name == "user_id":
                acc("emb.user", s.users, g)
            elif name == "history":
                acc("emb.video", s.history, cache["history"][:, :, None] * g[:, None, :])
            elif name == "user_topics":
                flat_idx, w = cache["user_topics"]
                acc("emb.topic", flat_idx, w[:, :, None] * g[:, None, :])
            elif name == "video_id":
                acc("emb.video", s.videos, g)
            elif name == "tags":
                acc("emb.tag", ix.tag_index[s.videos], cache["tags"][:, :, None] * g[:, None, :])
            elif name == "topics":
                acc("emb.topic", ix.topic_index[s.videos], cache["topics"][:, :, None] * g[:, None, :])
            elif name == "cover":
                grads["cover.W"] = grads.get("cover.W", 0) + ix.cover[s.videos].T @ g
                grads["cover.b"] = grads.get("cover.b", 0) + g.sum(axis=0)

    # model ----------------------------------------------------------------

    def logits(self, s: Samples):
        x, fcache = self.features(s)
        P = self.params
        out = np.zeros(len(s))
        hs = []
        if "lr.w" in P:
            out = out + x @ P["lr.w"] + P["lr.b"][0]
        if "mlp.out.w" in P:
            h = x
            for i in range(len(self.hidden)):
                h = np.tanh(h @ P[f"mlp.l{i}.W"] + P[f"mlp.l{i}.b"])
                hs.append(h)
            out = out + h @ P["mlp.out.w"] + P["mlp.out.b"][0]
        return out, (x, fcache, hs)

    def predict(self, s: Samples) -> np.ndarray:
        z, _ = self.logits(s)
        return sigmoid(z)

    def loss_and_grads(self, s: Samples) -> tuple[float, Params]:
        if len(s.history) != len(s.videos):
            raise ValueError("training samples need one history row per sample")
        z, (x, fcache, hs) = self.logits(s)
        p = sigmoid(z)
        y = s.labels
        value = float((np.logaddexp(0.0, z) - y * z).mean())
        grad_z = (p - y) / len(s)
        P = self.params
        grads: Params = {}
        grad_x = np.zeros_like(x)
        if "lr.w" in P:
            grads["lr.w"] = x.T @ grad_z
            grads["lr.b"] = np.array([grad_z.sum()])
            grad_x += np.outer(grad_z, P["lr.w"])
        if "mlp.out.w" in P:
            grads["mlp.out.w"] = hs[-1].T @ grad_z
            grads["mlp.out.b"] = np.array([grad_z.sum()])
            g = np.outer(grad_z, P["mlp.out.w"])
            for i in reversed(range(len(self.hidden))):
                g = g * (1.0 - hs[i] ** 2)
                below = hs[i - 1] if i > 0 else x
                grads[f"mlp.l{i}.W"] = below.T @ g
                grads[f"mlp.l{i}.b"] = g.sum(axis=0)
                g = g @ P[f"mlp.l{i}.W"].T
            grad_x += g
        self._features_backward(s, fcache, grad_x, grads)
        return value, grads

    # single pair API --------------------------------------------------------

    def pair_samples(self, user: User, video_ids: Sequence[int]) -> Samples:
        hist = self.index.history_rows([v for v, _ in user.click_history], self.spec.history_window)
        h, m = _pad_rows([hist], self.spec.history_window)
        n = len(video_ids)
        return Samples(np.full(n, self.index.user(user.user_id)),
                       np.array([self.index.video(v) for v in video_ids], dtype=np.int64), h, m)

    def featurize(self, user: User, video_id: int) -> dict[str, np.ndarray]:
        return {k: v[0] for k, v in self.feature_blocks(self.pair_samples(user, [video_id])).items()}

    def score(self, user: User, video_id: int) -> float:
        return float(self.predict(self.pair_samples(user, [video_id]))[0])

    def score_many(self, user: User, video_ids: Sequence[int]) -> np.ndarray:
        if not len(video_ids):
            return np.zeros(0)
        return self.predict(self.pair_samples(user, video_ids))

    def rank(self, user: User, video_ids: Sequence[int]) -> list[int]:
        scores = self.score_many(user, video_ids)
        order = np.lexsort((np.asarray(video_ids), -scores))
        return [int(video_ids[i]) for i in order]

    # persistence ------------------------------------------------------------

    def to_json(self) -> dict:
        return {"kind": "ranker", "variant": self.variant, "spec": self.spec.__dict__.copy(),
                "hidden": list(self.hidden), "seed": self.seed, "params": params_to_json(self.params)}

    @classmethod
    def from_json(cls, blob: dict, index: FeatureIndex) -> "Ranker":
        r = cls(blob["variant"], FeatureSpec(**blob["spec"]), index, blob["hidden"], blob["seed"])
        for k, v in params_from_json(blob["params"]).items():
            r.params[k][...] = v
        return r


def train_ranker(ranker: Ranker, samples: Samples, config: RankerConfig, epochs: int | None = None,
                 optimizer: Adam | None = None) -> tuple[list[float], Adam]:
    """Mini-batch Adam on binary cross-entropy.

    The curve holds the full-data loss before training and after every epoch.
    """
    if samples.labels is None or not len(samples):
        raise ValueError("training samples need labels")
    if samples.labels.min() == samples.labels.max():
        warnings.warn("training labels contain a single class; the ranker will only learn the prior",
                      RuntimeWarning, stacklevel=2)
    rng = np.random.default_rng([config.seed, len(samples)])
    opt = optimizer or Adam(ranker.params, config.learning_rate)
    curve = [full_loss(ranker, samples)]
    n = len(samples)
    for _ in range(epochs or config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = samples.take(order[start:start + config.batch_size])
            value, grads = ranker.loss_and_grads(batch)
            if not np.isfinite(value):
                raise NumericError("non-finite ranker loss during training")
            opt.step(ranker.params, grads)
        curve.append(full_loss(ranker, samples))
    return curve, opt


def full_loss(ranker: Ranker, samples: Samples, chunk: int = 8192) -> float:
    total = 0.0
    for start in range(0, len(samples), chunk):
        s = samples.take(slice(start, start + chunk))
        z, _ = ranker.logits(s)
        total += float((np.logaddexp(0.0, z) - s.labels * z).sum())
    return total / len(samples)


def predict_all(ranker: Ranker, samples: Samples, chunk: int = 8192) -> np.ndarray:
    return np.concatenate([ranker.predict(samples.take(slice(s, s + chunk)))
                           for s in range(0, len(samples), chunk)]) if len(samples) else np.zeros(0)


def day_of(timestamp: int) -> int:
    return int(timestamp) // DAY
