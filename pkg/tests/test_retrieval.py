from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtlrec.config import QueueConfig, RetrievalConfig
from mtlrec.corpus import ClickEvent, ClickLog, User
from mtlrec.retrieval import (build_queues, fresh_limit, global_entries, largest_remainder, retrieve_candidates,
                              update_queue, user_top_topics)
from mtlrec.topics import TopicAssignment

DAY = 86400
CFG = QueueConfig()


def _assign(mapping):
    return {v: TopicAssignment(v, tuple(ts), tuple(1.0 for _ in ts)) for v, ts in mapping.items()}


def _log(rows):
    """rows of (user, video, timestamp, clicked)"""
    return ClickLog([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], [r[3] for r in rows],
                    [5.0 if r[3] else 0.0 for r in rows])


def _exposures(video, n, clicks, start=0):
    return [(0, video, start + i, i < clicks) for i in range(n)]


def test_fresh_limit_arithmetic():
    assert fresh_limit(90, 0.1) == 10
    assert fresh_limit(89, 0.1) == 9
    assert fresh_limit(9, 0.1) == 1
    assert fresh_limit(8, 0.1) == 0
    assert fresh_limit(50, 0.0) == 0


def test_under_exposed_old_video_is_absent():
    log = _log(_exposures(1, 5, 5) + _exposures(2, 20, 10))
    qs = build_queues(_assign({1: [0], 2: [0]}), log, CFG, now=10 * DAY, seed=0)
    assert 1 not in qs[0] and 2 in qs[0]
    assert 1 not in qs.global_queue


def test_ninety_survivors_leave_ten_fresh_slots():
    rows = []
    for v in range(90):
        rows += _exposures(v, 10, 5, start=v * 10)
    publish = {v: 0 for v in range(130)}
    publish.update({v: 9 * DAY for v in range(90, 130)})
    qs = build_queues(_assign({v: [0] for v in range(130)}), _log(rows), CFG, now=10 * DAY, seed=0,
                      publish_time=publish)
    assert len(qs[0]) == 100 and qs[0].fresh_count == 10


def test_queue_statistics_match_recount(small_corpus):
    videos, _, _, log = small_corpus
    assignments = _assign({v.video_id: [v.video_id % 4] for v in videos})
    qs = build_queues(assignments, log, QueueConfig(min_exposures=3, min_ctr=0.05), now=3 * DAY, seed=1,
                      publish_time={v.video_id: v.publish_time for v in videos})
    exposures = Counter(log.video_ids.tolist())
    clicks = Counter(log.video_ids[log.clicked].tolist())
    checked = 0
    for q in qs.queues.values():
        for e in q.entries:
            assert e.exposures == exposures.get(e.video_id, 0)
            assert e.clicks == clicks.get(e.video_id, 0)
            checked += 1
    assert checked > 0


def _sorted_ok(q):
    keys = [(-e.ctr, e.video_id) for e in q.entries]
    return keys == sorted(keys)


def test_click_raises_ctr_and_miss_lowers_it():
    log = _log(_exposures(1, 20, 4) + _exposures(2, 20, 5))
    qs = build_queues(_assign({1: [0], 2: [0]}), log, CFG, now=DAY, seed=0)
    before = qs[0].get(1)
    update_queue(qs, ClickEvent(0, 1, 100, True, 3.0))
    after = qs[0].get(1)
    assert after.ctr >= before.ctr
    assert qs[0].video_ids().index(1) <= 1
    update_queue(qs, ClickEvent(0, 1, 101, False))
    assert qs[0].get(1).ctr < after.ctr
    assert _sorted_ok(qs[0])


def _stream(draw_events, videos=8):
    return [ClickEvent(0, v, t, c, 1.0 if c else 0.0) for t, (v, c) in enumerate(draw_events)]


events = st.lists(st.tuples(st.integers(0, 7), st.booleans()), min_size=0, max_size=300)


@settings(max_examples=60, deadline=None)
@given(events, events)
def test_event_sequences_keep_queue_invariants(first, second):
    cfg = QueueConfig(min_exposures=3, min_ctr=0.3)
    assignments = _assign({v: [v % 2, 2] if v % 3 == 0 else [v % 2] for v in range(8)})
    publish = {v: (0 if v < 5 else 2 * DAY) for v in range(8)}
    start = ClickLog.from_events(_stream(first))
    qs = build_queues(assignments, start, cfg, now=3 * DAY, seed=4, publish_time=publish)
    for e in _stream(second):
        update_queue(qs, e)
    for q in list(qs.queues.values()) + [qs.global_queue]:
        for e in q.entries:
            if not e.is_fresh:
                assert e.exposures >= cfg.min_exposures and e.ctr >= cfg.min_ctr
        assert q.fresh_count <= fresh_limit(len(q) - q.fresh_count, cfg.fresh_fraction)
        assert _sorted_ok(q)


@settings(max_examples=40, deadline=None)
@given(events, st.sampled_from([0.0, 0.1, 0.25]))
def test_incremental_updates_equal_rebuild(stream, fraction):
    cfg = QueueConfig(min_exposures=3, min_ctr=0.3, fresh_fraction=fraction)
    assignments = _assign({v: [v % 3, 3] for v in range(8)})
    evs = _stream(stream)
    qs = build_queues(assignments, ClickLog(), cfg, now=0, seed=0)
    for e in evs:
        update_queue(qs, e)
    rebuilt = build_queues(assignments, ClickLog.from_events(evs), cfg, now=0, seed=0)
    for t in rebuilt.queues:
        assert qs[t].entries == [e for e in rebuilt[t].entries if not e.is_fresh]
    assert qs.global_queue.entries == rebuilt.global_queue.entries


def test_ignored_unknown_videos():
    qs = build_queues(_assign({1: [0]}), ClickLog(), CFG, now=0, seed=0)
    update_queue(qs, ClickEvent(0, 99, 1, True, 1.0))
    assert qs.ignored_events == 1


def _user(videos):
    return User(1, tuple((v, i) for i, v in enumerate(videos)))


def test_single_topic_history():
    assignments = _assign({v: [7] for v in range(5)})
    assert user_top_topics(_user([0, 1, 2]), assignments, RetrievalConfig()) == [7]


def test_top_topic_ties_break_by_id():
    assignments = _assign({0: [7], 1: [3], 2: [9]})
    history = [0] * 10 + [1] * 5 + [2] * 5
    cfg = RetrievalConfig(history_window=32, top_topics=2)
    assert user_top_topics(_user(history), assignments, cfg) == [7, 3]


def test_top_topics_match_recount(small_corpus):
    videos, users, _, _ = small_corpus
    assignments = _assign({v.video_id: sorted({v.video_id % 5, (v.video_id // 5) % 5}) for v in videos})
    heavy = max(users, key=lambda u: len(u.click_history))
    counts = Counter()
    for v, _ in heavy.click_history[-32:]:
        counts.update({v % 5, (v // 5) % 5})
    expected = [t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))][:4]
    assert user_top_topics(heavy, assignments, RetrievalConfig()) == expected


def test_largest_remainder():
    assert largest_remainder(60, [3, 1]) == [45, 15]
    assert largest_remainder(10, [1, 1, 1]) == [4, 3, 3]
    assert largest_remainder(5, [0, 0]) == [0, 0]


def _queues_with(topic_lists, seed=0):
    rows = []
    t = 0
    for ids in topic_lists.values():
        for rank, v in enumerate(ids):
            rows += _exposures(v, 200, 199 - rank, start=t)
            t += 200
    assignments = _assign({v: [k] for k, ids in topic_lists.items() for v in ids})
    return build_queues(assignments, _log(rows), CFG, now=DAY, seed=seed), assignments


def test_single_topic_returns_queue_prefix():
    qs, assignments = _queues_with({0: list(range(100, 180))})
    user = User(1, ((100, 0), (101, 1)))
    got = retrieve_candidates(user, qs, RetrievalConfig(num_candidates=60), assignments)
    order = [v for v in qs[0].video_ids() if v not in (100, 101)]
    assert got == order[:60]


def test_slots_redistribute_when_a_queue_runs_dry():
    qs, assignments = _queues_with({0: list(range(0, 100)), 1: list(range(200, 205))})
    user = User(1, ((0, 0), (200, 1)))
    got = retrieve_candidates(user, qs, RetrievalConfig(num_candidates=60), assignments)
    assert len(got) == 60 and len(set(got)) == 60
    assert sum(v >= 200 for v in got) == 4


def test_cold_start_falls_back_to_global(small_corpus):
    qs, assignments = _queues_with({0: list(range(10)), 1: list(range(20, 30))})
    got = retrieve_candidates(User(5), qs, RetrievalConfig(num_candidates=5), assignments)
    assert got == [e.video_id for e in qs.global_queue.entries][:5]
    assert got == [e.video_id for e in global_entries(qs.queues)][:5]


def test_candidates_are_unseen_and_unique(small_corpus):
    videos, users, _, log = small_corpus
    assignments = _assign({v.video_id: [v.video_id % 4, (v.video_id + 1) % 4] for v in videos})
    qs = build_queues(assignments, log, QueueConfig(min_exposures=2, min_ctr=0.05), now=3 * DAY, seed=1,
                      publish_time={v.video_id: v.publish_time for v in videos})
    cfg = RetrievalConfig(num_candidates=30)
    for u in users:
        got = retrieve_candidates(u, qs, cfg, assignments)
        assert len(got) <= 30 and len(set(got)) == len(got)
        assert not set(got) & {v for v, _ in u.click_history}
        assert got == retrieve_candidates(u, qs, cfg, assignments)
