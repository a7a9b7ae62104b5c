import dataclasses
import math

import numpy as np
import pytest

from mtlrec.config import FeatureSpec, RankerConfig
from mtlrec.corpus import ClickLog, User, Video
from mtlrec.eval.metrics import auc
from mtlrec.ranking import FeatureIndex, Ranker, Samples, full_loss, predict_all, samples_from_log, train_ranker
from oracles import numeric_gradient, relative_error

SPEC = FeatureSpec(tags=True, cover=True, id_dim=2, tag_dim=2, topic_dim=2, cover_dim=3, history_window=2)


def _micro():
    rng = np.random.default_rng(0)
    vids = [Video(i, (1,), tuple(rng.normal(size=3)), (i % 2, (i + 1) % 3), (0,), (0,)) for i in range(3)]
    index = FeatureIndex(vids, {0: (0, 1), 1: (1,), 2: ()}, [0, 1, 2], num_tags=3, num_topics=2)
    samples = Samples(np.array([0, 1, 2, 3]), np.array([0, 1, 2, 3]), np.array([[1, 2], [0, 0], [2, 1], [0, 3]]),
                      np.array([[1, 1.0], [1, 0], [0, 1], [1, 1]]), np.array([1, 0, 1, 0.0]))
    return vids, index, samples


@pytest.mark.parametrize("variant", ["lr", "emlp", "wide_deep"])
def test_gradient_on_micro_instance(variant):
    _, index, samples = _micro()
    ranker = Ranker(variant, SPEC, index, hidden=(3, 2), seed=1, init_scale=0.5)
    _, grads = ranker.loss_and_grads(samples)
    assert {"emb.user", "emb.video", "emb.tag", "emb.topic", "cover.W"} <= set(grads)
    for k, p in ranker.params.items():
        num = numeric_gradient(lambda: ranker.loss_and_grads(samples)[0], p)
        assert relative_error(grads[k], num) < 1e-4, k


def _index(n_videos=4, topics=None):
    vids = [Video(i, (0,), (0.0, 1.0), (i,), (0,), (0,)) for i in range(n_videos)]
    return FeatureIndex(vids, topics or {i: (i % 2,) for i in range(n_videos)}, [7], num_tags=n_videos, num_topics=2)


def test_history_of_one_click_is_that_embedding():
    ranker = Ranker("emlp", FeatureSpec(id_dim=3), _index(), seed=2)
    user = User(7, ((2, 10),))
    blocks = ranker.featurize(user, 1)
    assert np.allclose(blocks["history"], ranker.params["emb.video"][2], atol=1e-15)


def test_disabling_topics_drops_only_topic_blocks():
    index = _index()
    with_topics = Ranker("lr", FeatureSpec(id_dim=3), index, seed=2)
    without = Ranker("lr", FeatureSpec(id_dim=3).without_topics(), index, seed=2)
    for k in without.params:
        if k.startswith("emb.") and k in with_topics.params:
            without.params[k] = with_topics.params[k]
    user = User(7, ((0, 1), (3, 2)))
    a, b = with_topics.featurize(user, 1), without.featurize(user, 1)
    assert set(a) - set(b) == {"topics", "user_topics", "topic_cross"}
    for name in b:
        assert np.array_equal(a[name], b[name])


def test_identical_topic_embeddings_pool_to_that_vector():
    index = _index(topics={0: (0, 1), 1: (1,), 2: (0,), 3: (0, 1)})
    ranker = Ranker("emlp", FeatureSpec(id_dim=2, topic_dim=4), index, seed=0)
    e = np.array([0.1, -0.2, 0.3, 0.4])
    ranker.params["emb.topic"][:2] = e
    assert np.allclose(ranker.featurize(User(7), 0)["topics"], e, atol=1e-15)


def test_zero_initialised_lr_scores_one_half():
    ranker = Ranker("lr", FeatureSpec(), _index(), zero_init=True)
    assert ranker.score(User(7, ((1, 0),)), 2) == 0.5
    assert np.all(ranker.score_many(User(3), [0, 1, 2, 3]) == 0.5)


def test_constant_base_rate_loss_is_bernoulli_entropy():
    _, index, samples = _micro()
    ranker = Ranker("lr", dataclasses.replace(SPEC, cover=False), index, zero_init=True)
    p = samples.labels.mean()
    ranker.params["lr.b"][0] = math.log(p / (1 - p))
    assert full_loss(ranker, samples) == pytest.approx(-(p * math.log(p) + (1 - p) * math.log(1 - p)), abs=1e-12)


def test_scores_deterministic_and_in_range():
    ranker = Ranker("emlp", FeatureSpec(), _index(), seed=3)
    user = User(7, ((0, 1),))
    s = ranker.score_many(user, [0, 1, 2, 3])
    assert np.array_equal(s, ranker.score_many(user, [0, 1, 2, 3]))
    assert ((s > 0) & (s < 1)).all()
    assert ranker.score(user, 2) == pytest.approx(s[2], abs=1e-15)


def test_rank_orders_by_score_then_id():
    ranker = Ranker("lr", FeatureSpec(), _index(), zero_init=True)
    assert ranker.rank(User(7), [3, 1, 2]) == [1, 2, 3]


def test_history_uses_only_earlier_days():
    index = _index()
    log = ClickLog([7, 7, 7], [0, 1, 2], [10, 20, 86400 + 5], [True, True, False], [1.0, 1.0, 0.0])
    s = samples_from_log(log, index, window=4)
    assert s.history_mask[0].sum() == s.history_mask[1].sum() == 0
    assert sorted(s.history[2][s.history_mask[2] > 0].tolist()) == [0, 1]


def test_training_reduces_loss(small_corpus):
    videos, users, _, log = small_corpus
    index = FeatureIndex(videos, {v.video_id: ((v.video_id % 3),) for v in videos}, [u.user_id for u in users],
                         num_tags=36, num_topics=3)
    samples = samples_from_log(log, index, 8)
    ranker = Ranker("emlp", FeatureSpec(history_window=8), index, seed=0)
    curve, _ = train_ranker(ranker, samples, RankerConfig(epochs=2))
    assert curve[-1] < curve[0]


def test_auc_invariant_under_monotone_transform(small_corpus):
    videos, users, _, log = small_corpus
    index = FeatureIndex(videos, {}, [u.user_id for u in users], num_tags=36, num_topics=1)
    samples = samples_from_log(log, index, 8)
    ranker = Ranker("emlp", FeatureSpec(history_window=8, topics=False, user_topics=False), index, seed=1)
    scores = predict_all(ranker, samples)
    assert auc(scores, samples.labels) == auc(np.log(scores) * 3 + 1, samples.labels)


def test_model_round_trip():
    index = _index()
    ranker = Ranker("wide_deep", FeatureSpec(), index, seed=5)
    again = Ranker.from_json(ranker.to_json(), index)
    user = User(7, ((0, 1),))
    assert np.array_equal(ranker.score_many(user, [0, 1, 2]), again.score_many(user, [0, 1, 2]))


def test_cross_block_needs_both_topic_sides():
    ranker = Ranker("lr", FeatureSpec(user_topics=False), _index())
    assert "topic_cross" not in dict(ranker.blocks)
    assert ranker.width == FeatureSpec().id_dim * 3 + FeatureSpec().topic_dim


def test_unknown_variant():
    with pytest.raises(ValueError):
        Ranker("dcn", FeatureSpec(), _index())
