"""Simulated A/B test over served recommendation pages.

A pipeline serves a page by retrieving candidates and ranking them. Each
simulated user opens a fixed number of sessions per day. Within a session the
user clicks according to the planted click model and watches each clicked
video for its expected duration. A session starts with a page budget
proportional to the user's activity; every page spends one unit and every
click earns some back, so better pages lead to longer sessions. Every user-day draws from its own random stream keyed by
(seed, phase, user, day), so identical pipelines on identical users produce
identical traffic and the measurement phase never shares draws with the test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..config import DAY, AbConfig, ClickConfig, RetrievalConfig
from ..corpus import ClickEvent, GroundTruth, User, click_probability, watch_mean
from ..errors import ConfigError
from ..ranking import Ranker
from ..retrieval import QueueSet, retrieve_candidates, update_queue
from ..topics import TopicAssignment

METRICS = ("UVD", "UAVD", "AVD", "ART")
MIN_USERS = 16


@dataclass
class Pipeline:
    """``retrieval`` is ``"topic"`` (topic queues) or ``"global"`` (the global CTR queue)."""

    name: str
    retrieval: str
    ranker: Ranker

    def __post_init__(self):
        if self.retrieval not in ("topic", "global"):
            raise ValueError(f"unknown retrieval mode {self.retrieval!r}")


@dataclass
class Traffic:
    """Totals accumulated by a set of users."""

    num_users: int
    watch: float = 0.0
    plays: int = 0
    pages: int = 0
    exposures: int = 0

    def metrics(self) -> dict[str, float]:
        return group_metrics(self.watch, self.plays, self.pages, self.num_users)

    @classmethod
    def total(cls, parts: Sequence["Traffic"]) -> "Traffic":
        return cls(sum(t.num_users for t in parts), sum(t.watch for t in parts), sum(t.plays for t in parts),
                   sum(t.pages for t in parts), sum(t.exposures for t in parts))


def group_metrics(total_watch: float, plays: int, pages: int, num_users: int) -> dict[str, float]:
    """UVD total watch time; UAVD per user; AVD per play; ART page refreshes per user."""
    if num_users <= 0:
        raise ValueError("metrics need at least one user")
    return {"UVD": total_watch, "UAVD": total_watch / num_users,
            "AVD": total_watch / plays if plays else 0.0, "ART": pages / num_users}


def relative_increments(experiment: Mapping[str, float], control: Mapping[str, float]) -> dict[str, float]:
    return {m: (experiment[m] - control[m]) / control[m] if control[m] else 0.0 for m in METRICS}


@dataclass
class AbResult:
    experiment_group: int
    control_group: int
    pre_period: dict[str, dict[str, float]]
    control: dict[str, float]
    arms: dict[str, dict[str, float]] = field(default_factory=dict)
    increments: dict[str, dict[str, float]] = field(default_factory=dict)
    balanced_distance: float = 0.0  # measured activity distance of the pair after balancing

    def to_json(self) -> dict:
        return {"experiment_group": self.experiment_group, "control_group": self.control_group,
                "pre_period": self.pre_period, "balanced_distance": self.balanced_distance,
                "control": self.control, "arms": self.arms,
                "increments": self.increments}


class Simulator:
    def __init__(self, truth: GroundTruth, assignments: Mapping[int, TopicAssignment], clicks: ClickConfig,
                 retrieval: RetrievalConfig, config: AbConfig, seed: int):
        config.validate()
        self.truth, self.assignments = truth, assignments
        self.clicks, self.retrieval, self.config = clicks, retrieval, config
        self.seed = seed
        self._topics = {v: np.array(t) for v, t in truth.video_topics.items()}

    def affinity(self, user_id: int, video_ids: Sequence[int]) -> np.ndarray:
        prefs = self.truth.user_preferences[user_id]
        return np.array([prefs[self._topics[v]].sum() for v in video_ids])

    def serve_day(self, pipeline: Pipeline, user_id: int, history: list[tuple[int, int]], day: int,
                  queues: QueueSet, traffic: Traffic, phase: int = 0) -> None:
        cfg = self.config
        rng = np.random.default_rng([self.seed, phase, user_id, day])
        activity = float(self.truth.user_activity[user_id])
        shown: set[int] = set()
        clock = day * DAY
        for _ in range(cfg.sessions_per_day):
            budget = activity * cfg.session_budget
            for _ in range(cfg.max_pages):
                page = self._page(pipeline, user_id, history, queues, shown)
                if not page:
                    return
                traffic.pages += 1
                aff = self.affinity(user_id, page)
                clicked = rng.random(len(page)) < click_probability(aff, self.clicks.slope, self.clicks.bias)
                watch = watch_mean(aff, self.clicks.mean_watch)
                for v, c, w in zip(page, clicked, watch):
                    clock += 1
                    shown.add(v)
                    update_queue(queues, ClickEvent(user_id, v, clock, bool(c), float(w) if c else 0.0))
                    if c:
                        history.append((v, clock))
                        traffic.watch += float(w)
                        traffic.plays += 1
                traffic.exposures += len(page)
                budget += cfg.click_credit * clicked.sum() - 1.0
                if budget <= 0:
                    break

    def _page(self, pipeline: Pipeline, user_id: int, history: list[tuple[int, int]], queues: QueueSet,
              shown: set[int]) -> list[int]:
        user = User(user_id, tuple(history))
        if pipeline.retrieval == "topic":
            candidates = retrieve_candidates(user, queues, self.retrieval, self.assignments, exclude=shown)
        else:
            candidates = retrieve_candidates(User(user_id), {}, self.retrieval, {},
                                             fallback=queues.global_queue.entries,
                                             exclude=shown | {v for v, _ in history})
        return pipeline.ranker.rank(user, candidates)[:self.config.page_size] if candidates else []

    def run(self, pipeline: Pipeline, user_ids: Sequence[int], histories: dict[int, list[tuple[int, int]]],
            first_day: int, num_days: int, queues: QueueSet, phase: int = 0) -> Traffic:
        """Serve ``num_days`` days; histories and ``queues`` are updated in place."""
        return Traffic.total(list(self.run_users(pipeline, user_ids, histories, first_day, num_days,
                                                 queues, phase).values()))

    def run_users(self, pipeline: Pipeline, user_ids: Sequence[int], histories: dict[int, list[tuple[int, int]]],
                  first_day: int, num_days: int, queues: QueueSet, phase: int = 0) -> dict[int, Traffic]:
        """Like :meth:`run` but keeps one traffic record per user."""
        traffic = {u: Traffic(1) for u in user_ids}
        for day in range(first_day, first_day + num_days):
            for u in user_ids:
                self.serve_day(pipeline, u, histories.setdefault(u, []), day, queues, traffic[u], phase)
        return traffic


def split_groups(user_ids: Sequence[int], num_groups: int, seed: int) -> list[list[int]]:
    """Random equal-size groups; the ``len(user_ids) % num_groups`` leftover users sit out.

    Equal sizes keep totals such as UVD comparable between groups.
    """
    size = len(user_ids) // num_groups
    order = np.random.default_rng(seed).permutation(len(user_ids))[:size * num_groups]
    return [sorted(int(user_ids[i]) for i in order[g::num_groups]) for g in range(num_groups)]


def activity_distance(a: Mapping[str, float], b: Mapping[str, float]) -> float:
    """Largest absolute log-ratio over the four activity metrics."""
    out = 0.0
    for m in METRICS:
        x, y = a[m], b[m]
        out = max(out, abs(math.log(x / y)) if x > 0 and y > 0 else math.inf)
    return out


def _swap_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """activity_distance after swapping user x of ``a`` with user y of ``b``, for every (x, y).

    Rows of ``a`` and ``b`` hold per-user (watch, plays, pages); groups have equal size.
    """
    ta, tb = a.sum(axis=0), b.sum(axis=0)
    delta = b[None, :, :] - a[:, None, :]  # (x, y, 3)
    na, nb = ta + delta, tb - delta
    with np.errstate(divide="ignore", invalid="ignore"):
        gaps = [np.log(na[..., 0] / nb[..., 0]),  # UVD and UAVD
                np.log((na[..., 0] / na[..., 1]) / (nb[..., 0] / nb[..., 1])),  # AVD
                np.log(na[..., 2] / nb[..., 2])]  # ART
    out = np.max(np.abs(gaps), axis=0)
    return np.where(np.isfinite(out), out, np.inf)


def balance_pair(a: Sequence[int], b: Sequence[int], per_user: Mapping[int, Traffic],
                 max_swaps: int = 100) -> tuple[list[int], list[int], float]:
    """Greedily swap users between two groups while their measured activity distance shrinks."""
    a, b = list(a), list(b)

    def rows(group):
        return np.array([[per_user[u].watch, per_user[u].plays, per_user[u].pages] for u in group], dtype=float)

    ra, rb = rows(a), rows(b)
    current = activity_distance(Traffic.total([per_user[u] for u in a]).metrics(),
                                Traffic.total([per_user[u] for u in b]).metrics())
    for _ in range(max_swaps):
        d = _swap_distances(ra, rb)
        x, y = np.unravel_index(int(np.argmin(d)), d.shape)
        if not d[x, y] < current:
            break
        current = float(d[x, y])
        a[x], b[y] = b[y], a[x]
        ra[x], rb[y] = rb[y].copy(), ra[x].copy()
    return sorted(a), sorted(b), current


def closest_pair(metrics: Sequence[Mapping[str, float]]) -> tuple[int, int]:
    best = None
    for i in range(len(metrics)):
        for j in range(i + 1, len(metrics)):
            d = activity_distance(metrics[i], metrics[j])
            if best is None or d < best[0]:
                best = (d, i, j)
    return best[1], best[2]


MEASURE, TEST = 0, 1


def ab_test(simulator: Simulator, control: Pipeline, experiments: Sequence[Pipeline], users: Sequence[User],
            queues: QueueSet, start_day: int) -> AbResult:
    """Measure every group under ``control``, pick and balance the closest pair, then run each arm.

    The measurement phase works on throwaway copies of the queues and click
    histories, so every test run starts from the state the groups were
    measured in. Per-user measurements let the closest pair be refined by
    swapping users between its two groups. The experiment group is then
    served by each arm in turn and the control group by ``control``; each run
    gets its own queue copy and its own random streams.
    """
    cfg = simulator.config
    if len(users) < max(MIN_USERS, cfg.num_groups):
        raise ConfigError(f"an A/B test needs at least {MIN_USERS} users, got {len(users)}")
    groups = split_groups([u.user_id for u in users], cfg.num_groups, simulator.seed)
    initial = {u.user_id: list(u.click_history) for u in users}

    def histories(members):
        return {u: list(initial[u]) for u in members}

    per_user: dict[int, Traffic] = {}
    pre = []
    for g in groups:
        measured = simulator.run_users(control, g, histories(g), start_day, cfg.days, queues.copy(), MEASURE)
        per_user.update(measured)
        pre.append(Traffic.total(list(measured.values())).metrics())
    i, j = closest_pair(pre)
    flip = np.random.default_rng([simulator.seed, i, j]).random() < 0.5
    exp_group, ctrl_group = (j, i) if flip else (i, j)
    exp_users, ctrl_users, distance = balance_pair(groups[exp_group], groups[ctrl_group], per_user)

    def serve(pipeline, members):
        return simulator.run(pipeline, members, histories(members), start_day, cfg.days, queues.copy(),
                             TEST).metrics()

    ctrl = serve(control, ctrl_users)
    result = AbResult(exp_group, ctrl_group, {str(k): m for k, m in enumerate(pre)}, ctrl,
                      balanced_distance=distance)
    for arm in experiments:
        result.arms[arm.name] = m = serve(arm, exp_users)
        result.increments[arm.name] = relative_increments(m, ctrl)
    return result
