import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtlrec.encoders import ImageEncoder, TitleEncoder
from oracles import numeric_gradient, relative_error


def test_zero_input_through_zero_final_layer(rng):
    enc = ImageEncoder(5, 4, 3, rng, zero_last=True)
    assert np.array_equal(enc.encode(np.zeros(5)), np.zeros(3))


def test_image_forward_is_deterministic(rng):
    enc = ImageEncoder(5, 4, 3, rng)
    x = rng.normal(size=(2, 5))
    assert np.array_equal(enc.forward(x)[0], enc.forward(x)[0])


def test_image_rejects_wrong_width(rng):
    with pytest.raises(ValueError):
        ImageEncoder(5, 4, 3, rng).forward(np.zeros((1, 4)))


def test_single_token_pool_is_its_embedding(rng):
    enc = TitleEncoder(10, 4, 3, 2, rng)
    pooled, _ = enc.pool([[7]])
    assert np.array_equal(pooled[0], enc.params["title.emb"][7])


def test_repeated_token_title_equals_single(rng):
    enc = TitleEncoder(10, 4, 3, 2, rng)
    assert np.allclose(enc.encode([3, 3, 3]), enc.encode([3]), atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=8), st.randoms())
def test_title_pooling_is_permutation_invariant(tokens, rnd):
    enc = TitleEncoder(10, 4, 3, 2, np.random.default_rng(0))
    shuffled = list(tokens)
    rnd.shuffle(shuffled)
    assert np.allclose(enc.encode(tokens), enc.encode(shuffled), atol=1e-12)


def test_out_of_vocabulary_token(rng):
    with pytest.raises(ValueError):
        TitleEncoder(10, 4, 3, 2, rng).encode([10])


def _check(enc, f_forward, weights):
    def value():
        out, _ = f_forward()
        return float((out * weights).sum())

    out, cache = f_forward()
    grads = {}
    enc.backward(cache, weights, grads)
    for k, p in enc.params.items():
        assert relative_error(grads[k], numeric_gradient(value, p)) < 1e-4, k


def test_image_gradient(rng):
    enc = ImageEncoder(4, 3, 2, rng)
    x = rng.normal(size=(3, 4))
    _check(enc, lambda: enc.forward(x), rng.normal(size=(3, 2)))


def test_title_gradient(rng):
    enc = TitleEncoder(6, 3, 3, 2, rng)
    titles = [[1, 2, 2], [5], [0, 3]]
    _check(enc, lambda: enc.forward(titles), rng.normal(size=(3, 2)))
