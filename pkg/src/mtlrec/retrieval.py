"""Topic queues and topic-driven candidate generation."""
from __future__ import annotations

import bisect
import threading
from collections import Counter
from functools import lru_cache
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Collection, Mapping, Sequence

import numpy as np

from .config import DAY, QueueConfig, RetrievalConfig
from .corpus import ClickEvent, ClickLog, User
from .topics import TopicAssignment


@dataclass(frozen=True)
class QueueEntry:
    video_id: int
    exposures: int
    clicks: int
    ctr: float
    is_fresh: bool = False

    @property
    def key(self) -> tuple[float, int]:
        return (-self.ctr, self.video_id)

    def as_row(self) -> list:
        return [self.video_id, self.exposures, self.clicks, self.ctr, self.is_fresh]


def ctr_of(exposures: int, clicks: int) -> float:
    return clicks / exposures if exposures > 0 else 0.0


def passes(exposures: int, clicks: int, config: QueueConfig) -> bool:
    return exposures >= config.min_exposures and ctr_of(exposures, clicks) >= config.min_ctr


@lru_cache(maxsize=None)
def _exact(fraction: float) -> tuple[int, int]:
    f = Fraction(str(fraction))
    return f.numerator, f.denominator


def fresh_limit(non_fresh: int, fraction: float) -> int:
    """Largest fresh count that keeps fresh entries at most ``fraction`` of the final queue.

    Exact integer arithmetic: floor(f * n / (1 - f)) with f = p / q is floor(p * n / (q - p)).
    """
    p, q = _exact(fraction)
    return p * non_fresh // (q - p)


class TopicQueue:
    """Entries kept sorted by CTR descending, video id ascending."""

    def __init__(self, topic_id: int, entries: Sequence[QueueEntry] = ()):
        self.topic_id = topic_id
        self.entries: list[QueueEntry] = sorted(entries, key=lambda e: e.key)
        self._keys = [e.key for e in self.entries]
        self._index = {e.video_id: e for e in self.entries}
        self._fresh = sum(e.is_fresh for e in self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, video_id: int) -> bool:
        return video_id in self._index

    def __eq__(self, other):
        if not isinstance(other, TopicQueue):
            return NotImplemented
        return self.topic_id == other.topic_id and self.entries == other.entries

    def __repr__(self):
        return f"TopicQueue({self.topic_id}, {len(self)} entries)"

    def get(self, video_id: int) -> QueueEntry | None:
        return self._index.get(video_id)

    def video_ids(self) -> list[int]:
        return [e.video_id for e in self.entries]

    @property
    def fresh_count(self) -> int:
        return self._fresh

    def remove(self, video_id: int) -> None:
        entry = self._index.pop(video_id)
        self._fresh -= entry.is_fresh
        i = bisect.bisect_left(self._keys, entry.key)
        del self._keys[i]
        del self.entries[i]

    def put(self, entry: QueueEntry) -> None:
        if entry.video_id in self._index:
            self.remove(entry.video_id)
        i = bisect.bisect_left(self._keys, entry.key)
        self._keys.insert(i, entry.key)
        self.entries.insert(i, entry)
        self._index[entry.video_id] = entry
        self._fresh += entry.is_fresh


@dataclass
class QueueSet:
    """Queues for every topic plus the running exposure/click statistics behind them."""

    config: QueueConfig
    topics_of: dict[int, tuple[int, ...]]
    publish_time: dict[int, int]
    stats: dict[int, list[int]]
    queues: dict[int, TopicQueue]
    global_queue: TopicQueue
    ignored_events: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __getitem__(self, topic_id: int) -> TopicQueue:
        return self.queues[topic_id]

    def entry_for(self, video_id: int, fresh: bool) -> QueueEntry:
        e, c = self.stats.get(video_id, (0, 0))
        return QueueEntry(video_id, e, c, ctr_of(e, c), fresh)

    def snapshot(self) -> dict[int, tuple[QueueEntry, ...]]:
        with self._lock:
            return {t: tuple(q.entries) for t, q in self.queues.items()}

    def copy(self) -> "QueueSet":
        with self._lock:
            return QueueSet(self.config, self.topics_of, self.publish_time,
                            {k: list(v) for k, v in self.stats.items()},
                            {t: TopicQueue(t, q.entries) for t, q in self.queues.items()},
                            TopicQueue(-1, self.global_queue.entries), self.ignored_events)


def click_statistics(log: ClickLog) -> dict[int, list[int]]:
    exposures = Counter(log.video_ids.tolist())
    clicks = Counter(log.video_ids[log.clicked].tolist())
    return {v: [exposures[v], clicks.get(v, 0)] for v in exposures}


def build_queues(assignments: Mapping[int, TopicAssignment], click_log: ClickLog, config: QueueConfig,
                 now: int, seed: int, publish_time: Mapping[int, int] | None = None) -> QueueSet:
    config.validate()
    topics_of = {int(v): tuple(a.topic_ids) for v, a in assignments.items()}
    publish = {v: int((publish_time or {}).get(v, 0)) for v in topics_of}
    stats = {v: s for v, s in click_statistics(click_log).items() if v in topics_of}
    members: dict[int, list[int]] = {}
    for v, ts in topics_of.items():
        for t in ts:
            members.setdefault(t, []).append(v)
    qs = QueueSet(config, topics_of, publish, stats, {}, TopicQueue(-1))
    max_age = config.fresh_age_days * DAY
    for t in sorted(members):
        kept, eligible = [], []
        for v in sorted(members[t]):
            e, c = stats.get(v, (0, 0))
            if passes(e, c, config):
                kept.append(qs.entry_for(v, False))
            elif publish[v] <= now and now - publish[v] < max_age:
                eligible.append(v)
        n_fresh = min(len(eligible), fresh_limit(len(kept), config.fresh_fraction))
        if n_fresh:
            rng = np.random.default_rng([seed, t])
            picked = rng.choice(len(eligible), size=n_fresh, replace=False)
            kept += [qs.entry_for(eligible[i], True) for i in sorted(picked)]
        qs.queues[t] = TopicQueue(t, kept)
    qs.global_queue = TopicQueue(-1, [qs.entry_for(v, False) for v in topics_of
                                      if passes(*stats.get(v, (0, 0)), config)])
    return qs


def update_queue(queues: QueueSet, event: ClickEvent) -> QueueSet:
    """Fold one exposure into the statistics and every affected queue."""
    v = event.video_id
    topics = queues.topics_of.get(v)
    if topics is None:
        queues.ignored_events += 1
        return queues
    cfg = queues.config
    with queues._lock:
        s = queues.stats.setdefault(v, [0, 0])
        s[0] += 1
        s[1] += int(event.clicked)
        ok = passes(s[0], s[1], cfg)
        ctr = ctr_of(s[0], s[1])
        settled = QueueEntry(v, s[0], s[1], ctr, False)
        fresh = QueueEntry(v, s[0], s[1], ctr, True)
        for t in topics:
            q = queues.queues.setdefault(t, TopicQueue(t))
            current = q.get(v)
            if ok:
                q.put(settled)
            elif current is not None and current.is_fresh:
                q.put(fresh)
            elif current is not None:
                q.remove(v)
            _trim_fresh(q, cfg.fresh_fraction)
        if ok:
            queues.global_queue.put(settled)
        elif v in queues.global_queue:
            queues.global_queue.remove(v)
    return queues


def _trim_fresh(q: TopicQueue, fraction: float) -> None:
    """Drop the lowest-ranked fresh entries until the fresh share is within bounds."""
    excess = q.fresh_count - fresh_limit(len(q) - q.fresh_count, fraction)
    if excess <= 0:
        return
    for e in [e for e in reversed(q.entries) if e.is_fresh][:excess]:
        q.remove(e.video_id)


def recent_clicks(user: User, window: int) -> list[int]:
    return [v for v, _ in user.click_history[-window:]]


def user_topic_counts(user: User, assignments: Mapping[int, TopicAssignment | Sequence[int]],
                      window: int) -> list[tuple[int, int]]:
    """Topic occurrence counts over the last ``window`` clicks, most frequent first."""
    counts: Counter = Counter()
    for v in recent_clicks(user, window):
        a = assignments.get(v)
        if a is None:
            continue
        counts.update(a.topic_ids if isinstance(a, TopicAssignment) else a)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def user_top_topics(user: User, assignments, config: RetrievalConfig) -> list[int]:
    return [t for t, _ in user_topic_counts(user, assignments, config.history_window)[:config.top_topics]]


def largest_remainder(total: int, weights: Sequence[int]) -> list[int]:
    s = sum(weights)
    if s == 0:
        return [0] * len(weights)
    exact = [Fraction(total * w, s) for w in weights]
    alloc = [int(x) for x in exact]
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - alloc[i]), i))
    for i in order[:total - sum(alloc)]:
        alloc[i] += 1
    return alloc


def global_entries(queues: Mapping[int, TopicQueue]) -> list[QueueEntry]:
    """Union of non-fresh entries across queues, in CTR order (the cold-start fallback)."""
    merged = {e.video_id: e for q in queues.values() for e in _entries(q) if not e.is_fresh}
    return sorted(merged.values(), key=lambda e: e.key)


def _entries(q) -> Sequence[QueueEntry]:
    return q.entries if isinstance(q, TopicQueue) else q


def retrieve_candidates(user: User, queues: QueueSet | Mapping[int, TopicQueue], config: RetrievalConfig,
                        assignments, fallback: Sequence[QueueEntry] | None = None,
                        exclude: Collection[int] = ()) -> list[int]:
    """Up to ``num_candidates`` unseen videos drawn from the queues of the user's top topics.

    ``exclude`` lists further ids to skip (for example videos already shown in a session).
    """
    if isinstance(queues, QueueSet):
        fallback = queues.global_queue.entries if fallback is None else fallback
        queues = queues.queues
    seen = {v for v, _ in user.click_history}
    seen.update(exclude)
    n3 = config.num_candidates
    top = user_topic_counts(user, assignments, config.history_window)[:config.top_topics]
    if not top:
        if fallback is None:
            fallback = global_entries(queues)
        return [e.video_id for e in fallback if e.video_id not in seen][:n3]
    alloc = largest_remainder(n3, [c for _, c in top])
    taken: list[int] = []
    chosen: set[int] = set()
    cursors = [0] * len(top)

    def take(i: int, quota: int) -> int:
        q = queues.get(top[i][0])
        entries = _entries(q) if q is not None else ()
        got = 0
        while got < quota and cursors[i] < len(entries):
            v = entries[cursors[i]].video_id
            cursors[i] += 1
            if v in seen or v in chosen:
                continue
            chosen.add(v)
            taken.append(v)
            got += 1
        return got

    carry = 0
    for i, quota in enumerate(alloc):
        want = quota + carry
        carry = want - take(i, want)
    for i in range(len(top)):
        if carry <= 0:
            break
        carry -= take(i, carry)
    return taken
