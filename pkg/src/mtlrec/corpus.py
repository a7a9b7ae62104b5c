"""Videos, users and click events, plus a synthetic corpus with planted topics.

Planted topics drive every modality of a generated video (tags, title words and
cover features) and the click behaviour of simulated users. They are returned
separately as ground truth and are only ever read by the evaluation code.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .config import DAY, ClickConfig, SyntheticSpec
from .errors import ConfigError


@dataclass(frozen=True)
class Video:
    video_id: int
    title_tokens: tuple[int, ...]
    cover_feature: tuple[float, ...]
    tags: tuple[int, ...]
    y1: tuple[int, ...]  # primary class indices set to 1
    y2: tuple[int, ...]  # secondary class indices set to 1
    publish_time: int = 0

    @property
    def y3(self) -> tuple[int, ...]:
        return self.tags


@dataclass(frozen=True)
class User:
    user_id: int
    click_history: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class ClickEvent:
    user_id: int
    video_id: int
    timestamp: int
    clicked: bool
    watch_duration: float = 0.0
    exposed: bool = True


@dataclass
class GroundTruth:
    """Planted structure, hidden from the pipeline."""

    video_topics: dict[int, tuple[int, ...]]
    user_preferences: np.ndarray  # (num_users, G)
    user_activity: np.ndarray  # (num_users,)
    num_topics: int
    topics_per_primary: int
    topics_per_secondary: int

    def dominant_topic(self, video_id: int) -> int:
        return self.video_topics[video_id][0]

    def indicator_matrix(self, video_ids: Sequence[int]) -> np.ndarray:
        out = np.zeros((len(video_ids), self.num_topics))
        for row, vid in enumerate(video_ids):
            out[row, list(self.video_topics[vid])] = 1.0
        return out

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return (self.video_topics == other.video_topics
                and np.array_equal(self.user_preferences, other.user_preferences)
                and np.array_equal(self.user_activity, other.user_activity)
                and (self.num_topics, self.topics_per_primary, self.topics_per_secondary)
                == (other.num_topics, other.topics_per_primary, other.topics_per_secondary))


class ClickLog:
    """Time-ordered exposure events stored column-wise."""

    def __init__(self, user_ids=(), video_ids=(), timestamps=(), clicked=(), watch=()):
        self.user_ids = np.asarray(user_ids, dtype=np.int64)
        self.video_ids = np.asarray(video_ids, dtype=np.int64)
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        self.clicked = np.asarray(clicked, dtype=bool)
        self.watch = np.asarray(watch, dtype=np.float64)
        n = len(self.user_ids)
        if not all(len(a) == n for a in (self.video_ids, self.timestamps, self.clicked, self.watch)):
            raise ValueError("click log columns must have equal length")

    @classmethod
    def from_events(cls, events: Sequence[ClickEvent]) -> "ClickLog":
        return cls([e.user_id for e in events], [e.video_id for e in events],
                   [e.timestamp for e in events], [e.clicked for e in events],
                   [e.watch_duration for e in events])

    def __len__(self) -> int:
        return len(self.user_ids)

    def __iter__(self) -> Iterator[ClickEvent]:
        for i in range(len(self)):
            yield self.event(i)

    def event(self, i: int) -> ClickEvent:
        return ClickEvent(int(self.user_ids[i]), int(self.video_ids[i]), int(self.timestamps[i]),
                          bool(self.clicked[i]), float(self.watch[i]))

    def __eq__(self, other):
        if not isinstance(other, ClickLog):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self._columns(), other._columns()))

    def _columns(self):
        return (self.user_ids, self.video_ids, self.timestamps, self.clicked, self.watch)

    @property
    def days(self) -> np.ndarray:
        return self.timestamps // DAY

    def num_days(self) -> int:
        return int(self.days.max()) + 1 if len(self) else 0

    def select(self, mask) -> "ClickLog":
        return ClickLog(*(c[mask] for c in self._columns()))

    def day_range(self, first: int, last: int) -> "ClickLog":
        """Events with day index in ``[first, last)``."""
        d = self.days
        return self.select((d >= first) & (d < last))

    def concat(self, other: "ClickLog") -> "ClickLog":
        merged = ClickLog(*(np.concatenate([a, b]) for a, b in zip(self._columns(), other._columns())))
        order = np.argsort(merged.timestamps, kind="stable")
        return merged.select(order)

    def ctr(self) -> float:
        return float(self.clicked.mean()) if len(self) else 0.0


def primary_of(topic: int, spec: SyntheticSpec) -> int:
    return topic // spec.topics_per_primary


def secondary_of(topic: int, spec: SyntheticSpec) -> int:
    return topic // spec.topics_per_secondary


def _owned_ranges(total: int, owners: int, reserve: int) -> list[np.ndarray]:
    per = (total - reserve) // owners
    return [np.arange(g * per, (g + 1) * per) for g in range(owners)]


def generate_corpus(spec: SyntheticSpec) -> tuple[list[Video], list[User], GroundTruth]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    G = spec.num_topics

    prototypes = rng.normal(size=(G, spec.d_img))
    tag_sets = _owned_ranges(spec.num_tags, G, 0)
    tag_probs = [rng.dirichlet(np.full(len(t), spec.tag_concentration)) for t in tag_sets]
    n_background = max(1, spec.vocab_size // 5)
    word_sets = _owned_ranges(spec.vocab_size, G, n_background)
    word_probs = [rng.dirichlet(np.ones(len(w))) for w in word_sets]
    background = np.arange(spec.vocab_size - n_background, spec.vocab_size)

    videos: list[Video] = []
    video_topics: dict[int, tuple[int, ...]] = {}
    for vid in range(spec.num_videos):
        g0 = int(rng.integers(G))
        n_topics = int(rng.integers(1, spec.max_topics_per_video + 1))
        topics = [g0]
        while len(topics) < n_topics:
            if rng.random() < spec.same_primary_prob:
                group = primary_of(g0, spec)
                pool = [g for g in range(group * spec.topics_per_primary,
                                         min(G, (group + 1) * spec.topics_per_primary)) if g not in topics]
            else:
                pool = [g for g in range(G) if g not in topics]
            if not pool:
                pool = [g for g in range(G) if g not in topics]
            topics.append(int(pool[rng.integers(len(pool))]))

        tags: set[int] = set()
        lo, hi = spec.tags_per_topic
        for g in topics:
            k = int(rng.integers(lo, hi + 1))
            tags.update(int(t) for t in rng.choice(tag_sets[g], size=k, p=tag_probs[g]))
        if rng.random() < spec.tag_noise_prob:
            tags.add(int(rng.integers(spec.num_tags)))

        lo, hi = spec.title_length
        length = int(rng.integers(lo, hi + 1))
        title = []
        for _ in range(length):
            if rng.random() < spec.title_topic_prob:
                g = topics[int(rng.integers(len(topics)))]
                title.append(int(rng.choice(word_sets[g], p=word_probs[g])))
            else:
                title.append(int(background[rng.integers(len(background))]))

        cover = prototypes[topics].mean(axis=0) + spec.noise_scale * rng.normal(size=spec.d_img)
        if rng.random() < spec.back_catalog_fraction:
            publish = 0
        else:
            publish = int(rng.integers(DAY, max(DAY + 1, spec.horizon_days * DAY)))
        videos.append(Video(
            video_id=vid,
            title_tokens=tuple(title),
            cover_feature=tuple(float(c) for c in cover),
            tags=tuple(sorted(tags)),
            y1=(primary_of(g0, spec),),
            y2=tuple(sorted({secondary_of(g, spec) for g in topics})),
            publish_time=publish,
        ))
        video_topics[vid] = tuple(topics)

    popularity = 1.0 / np.arange(1, G + 1) ** spec.topic_popularity_skew
    popularity = popularity[rng.permutation(G)]
    popularity /= popularity.sum()
    prefs = np.zeros((spec.num_users, G))
    lo, hi = spec.user_topics
    for u in range(spec.num_users):
        k = int(rng.integers(lo, hi + 1))
        liked = rng.choice(G, size=k, replace=False, p=popularity)
        prefs[u, liked] = rng.dirichlet(np.full(k, 2.0))
    activity = np.exp(0.25 * rng.normal(size=spec.num_users))
    users = [User(u) for u in range(spec.num_users)]
    truth = GroundTruth(video_topics, prefs, activity, G, spec.topics_per_primary, spec.topics_per_secondary)
    return videos, users, truth


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def click_probability(affinity, slope: float, bias: float):
    """Logistic click model on preference/topic alignment."""
    return sigmoid(slope * np.asarray(affinity) + bias)


def watch_mean(affinity, mean_watch: float):
    return mean_watch * (0.5 + np.asarray(affinity))


def simulate_clicks(videos: Sequence[Video], users: Sequence[User], truth: GroundTruth,
                    config: ClickConfig, seed: int, first_day: int = 0) -> ClickLog:
    """Expose each user to ``events_per_user_day`` published videos per day."""
    config.validate()
    if not videos or not users:
        raise ConfigError("simulate_clicks needs at least one video and one user")
    rng = np.random.default_rng(seed)
    vids = np.array([v.video_id for v in videos])
    publish = np.array([v.publish_time for v in videos])
    indicator = truth.indicator_matrix(vids)
    uids = np.array([u.user_id for u in users])
    prefs = truth.user_preferences[uids]
    E = config.events_per_user_day
    cols: list[list[np.ndarray]] = [[], [], [], [], []]
    for day in range(first_day, first_day + config.num_days):
        available = np.flatnonzero(publish <= day * DAY)
        if len(available) == 0:
            continue
        rows = np.repeat(np.arange(len(uids)), E)
        picks = available[rng.integers(len(available), size=len(rows))]
        ts = day * DAY + rng.integers(0, DAY, size=len(rows))
        affinity = np.einsum("ij,ij->i", prefs[rows], indicator[picks])
        clicked = rng.random(len(rows)) < click_probability(affinity, config.slope, config.bias)
        watch = np.where(clicked, rng.exponential(1.0, size=len(rows)) * watch_mean(affinity, config.mean_watch), 0.0)
        order = np.lexsort((vids[picks], uids[rows], ts))
        for col, values in zip(cols, (uids[rows], vids[picks], ts, clicked, watch)):
            col.append(values[order])
    if not cols[0]:
        return ClickLog()
    return ClickLog(*(np.concatenate(c) for c in cols))


def attach_histories(users: Sequence[User], log: ClickLog) -> list[User]:
    """Users whose click_history holds every clicked event of ``log``, in time order."""
    hist: dict[int, list[tuple[int, int]]] = {u.user_id: list(u.click_history) for u in users}
    idx = np.flatnonzero(log.clicked)
    for i in idx:
        uid = int(log.user_ids[i])
        if uid in hist:
            hist[uid].append((int(log.video_ids[i]), int(log.timestamps[i])))
    return [User(u.user_id, tuple(sorted(hist[u.user_id], key=lambda p: p[1]))) for u in users]


def label_matrix(videos: Sequence[Video], task: int, num_classes: int) -> np.ndarray:
    """Multi-hot targets for task 1 (primary), 2 (secondary) or 3 (tags)."""
    out = np.zeros((len(videos), num_classes))
    for row, v in enumerate(videos):
        idx = {1: v.y1, 2: v.y2, 3: v.y3}[task]
        if idx:
            out[row, list(idx)] = 1.0
    return out


def cover_matrix(videos: Sequence[Video]) -> np.ndarray:
    return np.array([v.cover_feature for v in videos], dtype=np.float64)
