import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mtlrec.errors import DegenerateRepresentationError
from mtlrec.topics import (TopicModel, assign_topics, build_topic_representation, combine_blocks, distance_ratio,
                           fit_kmeans, lloyd)
from oracles import exhaustive_kmeans_optimum

vectors = arrays(np.float64, st.integers(2, 6), elements=st.floats(-10, 10, allow_nan=False))


def test_block_normalization_example():
    a = build_topic_representation(np.array([3.0, 0.0]), np.array([0.0, 0.0, 4.0, 0.0]))
    assert np.allclose(a, np.array([1, 0, 0, 0, 1, 0]) / np.sqrt(2), atol=1e-15)


def test_zero_tag_block():
    a = build_topic_representation(np.zeros(2), np.array([0.0, 2.0]))
    assert a.tolist() == [0.0, 0.0, 0.0, 1.0]


def test_all_zero_blocks_are_rejected():
    with pytest.raises(DegenerateRepresentationError):
        combine_blocks(np.zeros((1, 2)), np.zeros((1, 3)))


@given(vectors, vectors)
def test_unit_norm_and_equal_block_shares(e, z):
    if np.linalg.norm(e) < 1e-6 or np.linalg.norm(z) < 1e-6:
        return
    a = build_topic_representation(e, z)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(a[:len(e)]) == pytest.approx(1 / np.sqrt(2), abs=1e-12)
    assert np.linalg.norm(a[len(e):]) == pytest.approx(1 / np.sqrt(2), abs=1e-12)


def test_k_equals_n_is_exact(rng):
    x = rng.normal(size=(5, 2))
    model = fit_kmeans(x, 5, restarts=3, normalize_centers=False)
    assert model.inertia == pytest.approx(0.0, abs=1e-20)
    assert sorted(map(tuple, model.centers)) == sorted(map(tuple, x))


def test_two_column_example():
    x = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    model = fit_kmeans(x, 2, normalize_centers=False)
    assert sorted(map(tuple, model.centers)) == [(0.0, 0.5), (10.0, 0.5)]
    assert model.labels[0] == model.labels[1] != model.labels[2] == model.labels[3]
    assert model.inertia == pytest.approx(exhaustive_kmeans_optimum(x), abs=1e-12)


def test_matches_exhaustive_optimum():
    rng = np.random.default_rng(99)
    for trial in range(25):
        n = int(rng.integers(3, 9))
        x = rng.normal(size=(n, 2)) * rng.uniform(0.5, 3.0)
        model = fit_kmeans(x, 2, restarts=20, seed=trial, normalize_centers=False)
        assert model.inertia == pytest.approx(exhaustive_kmeans_optimum(x), rel=1e-9, abs=1e-12)


def test_inertia_never_increases(rng):
    x = rng.normal(size=(300, 4))
    _, _, curve = lloyd(x, x[:6].copy(), 100)
    assert all(b <= a + 1e-9 for a, b in zip(curve, curve[1:]))


def _model(centers, threshold=0.6):
    return TopicModel(np.asarray(centers, dtype=float), threshold)


def test_point_on_center_has_similarity_one():
    m = _model([[1, 0], [0, 1]])
    a = assign_topics(np.array([0.0, 3.0]), m)
    assert a.topic_ids[0] == 1 and a.similarities[0] == pytest.approx(1.0, abs=1e-15)


def test_below_threshold_keeps_only_nearest():
    m = _model([[1, 0, 0], [0, 1, 0], [0, 0, 1]], threshold=0.99)
    a = assign_topics(np.array([0.5, 0.4, 0.3]), m)
    assert a.topic_ids == (0,)


def test_assignment_cap_and_order():
    m = _model(np.ones((12, 2)) + np.linspace(0, 0.01, 12)[:, None] * [1, -1], threshold=0.5)
    a = assign_topics(np.array([1.0, 1.0]), m, max_topics=8)
    assert len(a.topic_ids) == 8
    assert list(a.similarities) == sorted(a.similarities, reverse=True)


@settings(max_examples=40)
@given(arrays(np.float64, 4, elements=st.floats(-5, 5)), st.floats(0.01, 100))
def test_assignment_is_scale_invariant(rep, c):
    if np.linalg.norm(rep) < 1e-3:
        return
    m = _model([[1, 0, 0, 0], [0, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1]], threshold=0.3)
    assert assign_topics(rep, m).topic_ids == assign_topics(c * rep, m).topic_ids


def test_distance_ratio_degenerate_cases():
    tight = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert distance_ratio(tight, [0, 0, 1, 1]) > 1e9
    same = np.ones((4, 3))
    assert distance_ratio(same, [0, 0, 1, 1]) == pytest.approx(1.0)


def test_distance_ratio_matches_direct_pairs(rng):
    x = rng.normal(size=(30, 3))
    labels = rng.integers(3, size=30)
    u = x / np.linalg.norm(x, axis=1, keepdims=True)
    intra, inter = [], []
    for i in range(30):
        for j in range(i + 1, 30):
            (intra if labels[i] == labels[j] else inter).append(1 - u[i] @ u[j])
    assert distance_ratio(x, labels, chunk=7) == pytest.approx(np.mean(inter) / np.mean(intra), rel=1e-9)
