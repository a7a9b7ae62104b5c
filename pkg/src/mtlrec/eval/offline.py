"""Offline ranking protocols: topic-feature ablation, day-sliced replay and scoring cost."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..config import FeatureSpec, RankerConfig
from ..ranking import Ranker, Samples, predict_all, train_ranker
from .metrics import auc

#: replay arms; each extends the id-only baseline by one feature family
def replay_arms(base: FeatureSpec) -> dict[str, FeatureSpec]:
    baseline = dataclasses.replace(base, tags=False, topics=False, user_topics=False, cover=False)
    return {
        "baseline": baseline,
        "baseline_cnn": dataclasses.replace(baseline, cover=True),
        "baseline_topic": dataclasses.replace(baseline, topics=True),
    }


def ablation(make_ranker: Callable[[str, FeatureSpec], Ranker], samples: Samples, spec: FeatureSpec,
             config: RankerConfig, variants: Sequence[str] = ("lr", "emlp")) -> dict:
    """Train on every day but the last, test on the last, with and without topic features."""
    last = int(samples.days.max())
    train = samples.take(samples.days < last)
    test = samples.take(samples.days == last)
    out = {"train_events": len(train), "test_events": len(test), "test_day": last}
    for variant in variants:
        row = {}
        for label, s in (("without_topics", spec.without_topics()), ("with_topics", spec)):
            ranker = make_ranker(variant, s)
            train_ranker(ranker, train, config)
            row[label] = auc(predict_all(ranker, test), test.labels)
        row["gain"] = row["with_topics"] - row["without_topics"]
        out[variant] = row
    return out


@dataclass
class ReplayResult:
    days: list[int] = field(default_factory=list)
    auc: list[float | None] = field(default_factory=list)
    skipped: list[bool] = field(default_factory=list)
    trained_through: list[int] = field(default_factory=list)  # last day seen in training before scoring

    def mean_auc(self) -> float:
        values = [a for a in self.auc if a is not None]
        return float(np.mean(values)) if values else float("nan")

    def to_json(self) -> dict:
        return {"days": self.days, "auc": self.auc, "skipped": self.skipped,
                "trained_through": self.trained_through, "mean_auc": self.mean_auc()}


def offline_replay(ranker: Ranker, samples: Samples, config: RankerConfig, num_days: int,
                   first_day: int = 0) -> ReplayResult:
    """Train on ``first_day``; then repeatedly score the next day and fold its events into training."""
    seen = samples.days <= first_day
    if not seen.any():
        raise ValueError(f"no events on initial day {first_day}")
    _, opt = train_ranker(ranker, samples.take(seen), config)
    result = ReplayResult()
    for day in range(first_day + 1, first_day + 1 + num_days):
        today = samples.days == day
        trained_through = int(samples.days[seen].max())
        if trained_through >= day:
            raise AssertionError("replay would score a day it has trained on")
        result.days.append(day)
        result.trained_through.append(trained_through)
        test = samples.take(today)
        if len(test) == 0 or test.labels.min() == test.labels.max():
            result.auc.append(None)
            result.skipped.append(True)
        else:
            result.auc.append(auc(predict_all(ranker, test), test.labels))
            result.skipped.append(False)
        seen = seen | today
        train_ranker(ranker, samples.take(seen), config, epochs=config.replay_epochs, optimizer=opt)
    return result


def scoring_cost(rankers: Mapping[str, Ranker], samples: Samples, trials: int = 2000, batch: int = 256,
                 seed: int = 0) -> dict:
    """Median per-sample scoring time per ranker, amortized over a batch.

    Trials interleave the rankers so slow drift in machine load hits every arm
    alike. Each trial scores one randomly drawn batch.
    """
    if trials < 1000:
        raise ValueError("at least 1000 timing trials are required")
    rng = np.random.default_rng(seed)
    names = list(rankers)
    times = {n: np.empty(trials) for n in names}
    for r in rankers.values():  # warm caches
        r.predict(samples.take(np.arange(min(batch, len(samples)))))
    for t in range(trials):
        idx = rng.integers(len(samples), size=batch)
        s = samples.take(idx)
        for n in (names if t % 2 == 0 else names[::-1]):
            start = time.perf_counter()
            rankers[n].predict(s)
            times[n][t] = (time.perf_counter() - start) / batch
    return {n: {"width": rankers[n].width, "median_seconds_per_sample": float(np.median(times[n]))}
            for n in names}
