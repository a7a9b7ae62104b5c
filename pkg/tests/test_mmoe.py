import dataclasses
import math

import numpy as np
import pytest

from mtlrec.config import MmoeConfig, TrainConfig
from mtlrec.corpus import Video
from mtlrec.errors import ConfigError
from mtlrec.mmoe import Batch, MmoeNetwork, loss, make_batch, train
from oracles import numeric_gradient, relative_error

MICRO = MmoeConfig(num_experts=2, d_enc=2, encoder_hidden=3, d_tok=2, expert_hidden=3, d_expert=2, tower_hidden=3)


def _videos(rng, n, d_img=3, vocab=5, classes=(2, 3, 4)):
    out = []
    for i in range(n):
        tags = tuple(sorted(set(int(t) for t in rng.integers(classes[2], size=2))))
        out.append(Video(i, tuple(int(t) for t in rng.integers(vocab, size=int(rng.integers(1, 4)))),
                         tuple(rng.normal(size=d_img).tolist()), tags,
                         (int(rng.integers(classes[0])),), (int(rng.integers(classes[1])),)))
    return out


def test_end_to_end_gradient(rng):
    net = MmoeNetwork(MICRO, 3, 5, (2, 3, 4), seed=2)
    batch = make_batch(_videos(rng, 4), net.class_counts)
    _, grads = net.loss_and_grads(batch)
    groups = {"img.", "title.", "expert.", "gate", "tower"}
    assert all(any(k.startswith(g) for k in grads) for g in groups)
    for k, p in net.params.items():
        num = numeric_gradient(lambda: net.loss_and_grads(batch)[0], p)
        assert relative_error(grads[k], num) < 1e-4, k


def test_gates_and_towers_are_distributions(rng):
    net = MmoeNetwork(MmoeConfig(), 8, 40, (4, 10, 36), seed=1)
    vids = _videos(rng, 25, d_img=8, vocab=40, classes=(4, 10, 36))
    _, probs, gates, _ = net.forward_batch(make_batch(vids, net.class_counts).cover, [v.title_tokens for v in vids])
    assert len(probs) == len(gates) == 3
    for g in gates:
        assert g.shape[1] == 12 and (g > 0).all()
        assert np.abs(g.sum(axis=1) - 1).max() < 1e-6
    for p, m in zip(probs, (4, 10, 36)):
        assert p.shape[1] == m and np.abs(p.sum(axis=1) - 1).max() < 1e-6


def test_single_expert_gate_is_one(rng):
    net = MmoeNetwork(dataclasses.replace(MICRO, num_experts=1), 3, 5, (2, 3, 4))
    for g in net.gate_weights(_videos(rng, 1)[0]):
        assert g.tolist() == [1.0]


def test_equal_gate_logits_give_uniform_weights(rng):
    net = MmoeNetwork(dataclasses.replace(MICRO, num_experts=4), 3, 5, (2, 3, 4))
    for k in range(3):
        net.params[f"gate{k}.W"][...] = 0
        net.params[f"gate{k}.b"][...] = 0.7
    for g in net.gate_weights(_videos(rng, 1)[0]):
        assert np.allclose(g, 0.25, atol=1e-15)


def test_uniform_prediction_loss():
    counts = (3, 5, 7)
    probs = [np.full(m, 1 / m) for m in counts]
    targets = [np.eye(m)[0] for m in counts]
    assert loss(probs, targets) == pytest.approx(math.log(3) + math.log(5) + math.log(7), abs=1e-9)


def test_uniform_towers_reach_the_same_loss(rng):
    counts = (2, 3, 4)
    net = MmoeNetwork(MICRO, 3, 5, counts)
    for k in range(3):
        net.params[f"tower{k}.l2.W"][...] = 0
        net.params[f"tower{k}.l2.b"][...] = 0
    v = Video(0, (1,), (0.1, 0.2, 0.3), (3,), (1,), (2,))
    value, _ = net.loss_and_grads(make_batch([v], counts))
    assert value == pytest.approx(sum(math.log(m) for m in counts), abs=1e-9)


def test_perfect_prediction_has_zero_loss():
    assert loss([np.array([0.0, 1.0])] * 3, [np.array([0.0, 1.0])] * 3) == 0.0


def test_loss_is_non_negative_for_one_hot(rng):
    net = MmoeNetwork(MICRO, 3, 5, (2, 3, 4))
    value, _ = net.loss_and_grads(make_batch(_videos(rng, 6), net.class_counts))
    assert value >= 0


def test_training_reduces_loss(rng):
    vids = _videos(rng, 60)
    net = MmoeNetwork(MICRO, 3, 5, (2, 3, 4), seed=0)
    curve = train(net, vids, TrainConfig(learning_rate=0.02, batch_size=20, iterations=150))
    assert np.mean(curve[-10:]) < np.mean(curve[:10])


def test_zero_learning_rate_is_identity(rng):
    vids = _videos(rng, 10)
    net = MmoeNetwork(MICRO, 3, 5, (2, 3, 4), seed=0)
    before = {k: v.copy() for k, v in net.params.items()}
    curve = train(net, vids, TrainConfig(learning_rate=0.0, batch_size=10, iterations=5))
    assert all(np.array_equal(before[k], net.params[k]) for k in before)
    assert len(set(curve)) == 1


def test_training_is_deterministic(rng):
    vids = _videos(rng, 20)
    nets = [MmoeNetwork(MICRO, 3, 5, (2, 3, 4), seed=4) for _ in range(2)]
    for n in nets:
        train(n, vids, TrainConfig(batch_size=8, iterations=10))
    assert all(np.array_equal(nets[0].params[k], nets[1].params[k]) for k in nets[0].params)


def test_joint_representation_blocks(rng):
    net = MmoeNetwork(MICRO, 3, 5, (2, 3, 4))
    v = Video(0, (1, 2), (0.0, 0.0, 0.0), (1,), (0,), (0,))
    z = net.joint_representation(v)
    assert len(z) == 2 * MICRO.d_enc
    assert np.array_equal(z[:MICRO.d_enc], net.image.encode(np.zeros(3)))
    assert np.array_equal(net.joint_representation([v, v])[1], z)


def test_tags_do_not_enter_z(rng):
    net = MmoeNetwork(MICRO, 3, 5, (2, 3, 4))
    v = _videos(rng, 1)[0]
    other = dataclasses.replace(v, tags=(0, 1, 2, 3))
    assert np.array_equal(net.joint_representation(v), net.joint_representation(other))


def test_task_count_is_fixed():
    with pytest.raises(ConfigError):
        MmoeNetwork(MICRO, 3, 5, (2, 3))


def test_empty_training_set():
    with pytest.raises(ConfigError):
        train(MmoeNetwork(MICRO, 3, 5, (2, 3, 4)), [], TrainConfig())
