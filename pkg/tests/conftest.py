import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mtlrec.config import ClickConfig, SyntheticSpec  # noqa: E402
from mtlrec.corpus import attach_histories, generate_corpus, simulate_clicks  # noqa: E402


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticSpec(num_topics=6, num_videos=240, num_users=30, num_tags=36, vocab_size=60, d_img=8,
                         topics_per_primary=3, horizon_days=3, seed=11)


@pytest.fixture(scope="session")
def small_corpus(small_spec):
    videos, users, truth = generate_corpus(small_spec)
    log = simulate_clicks(videos, users, truth, ClickConfig(num_days=3, events_per_user_day=20), seed=3)
    return videos, attach_histories(users, log), truth, log


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_log.LINES):
            terminalreporter.write_line(line)
