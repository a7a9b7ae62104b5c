"""Trainable modality encoders for cover features and title tokens."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .nn import Params, TwoLayer, scatter_rows, uniform_init


def pad_sequences(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad integer sequences with 0 and return ``(index, mask)``."""
    width = max((len(s) for s in seqs), default=0)
    width = max(width, 1)
    index = np.zeros((len(seqs), width), dtype=np.int64)
    mask = np.zeros((len(seqs), width))
    for row, s in enumerate(seqs):
        index[row, :len(s)] = s
        mask[row, :len(s)] = 1.0
    return index, mask


class ImageEncoder:
    prefix = "img"

    def __init__(self, d_img: int, d_hidden: int, d_enc: int, rng: np.random.Generator, zero_last: bool = False):
        self.d_img, self.d_enc = d_img, d_enc
        self.params: Params = TwoLayer.init(rng, self.prefix, d_img, d_hidden, d_enc, zero_last=zero_last)

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_img:
            raise ValueError(f"cover features must have {self.d_img} columns, got shape {x.shape}")
        return TwoLayer.forward(self.params, self.prefix, x)

    def backward(self, cache, grad_out: np.ndarray, grads: Params) -> np.ndarray:
        return TwoLayer.backward(self.params, self.prefix, cache, grad_out, grads)

    def encode(self, x) -> np.ndarray:
        out, _ = self.forward(np.asarray(x, dtype=np.float64)[None, :])
        return out[0]


class TitleEncoder:
    """Mean of token embeddings followed by a two-layer network."""

    prefix = "title"

    def __init__(self, vocab_size: int, d_tok: int, d_hidden: int, d_enc: int, rng: np.random.Generator,
                 zero_last: bool = False):
        self.vocab_size, self.d_tok, self.d_enc = vocab_size, d_tok, d_enc
        self.params: Params = {f"{self.prefix}.emb": uniform_init(rng, d_tok, (vocab_size, d_tok))}
        self.params.update(TwoLayer.init(rng, self.prefix, d_tok, d_hidden, d_enc, zero_last=zero_last))

    def check_tokens(self, tokens: Sequence[int]) -> None:
        for t in tokens:
            if not 0 <= t < self.vocab_size:
                raise ValueError(f"token id {t} outside vocabulary of size {self.vocab_size}")

    def pool(self, titles: Sequence[Sequence[int]]):
        for title in titles:
            self.check_tokens(title)
        index, mask = pad_sequences(titles)
        counts = mask.sum(axis=1, keepdims=True)
        weights = mask / np.maximum(counts, 1.0)
        pooled = (weights[:, :, None] * self.params[f"{self.prefix}.emb"][index]).sum(axis=1)
        return pooled, (index, weights)

    def forward(self, titles: Sequence[Sequence[int]]):
        pooled, pool_cache = self.pool(titles)
        out, cache = TwoLayer.forward(self.params, self.prefix, pooled)
        return out, (pool_cache, cache)

    def backward(self, cache, grad_out: np.ndarray, grads: Params) -> None:
        (index, weights), mlp_cache = cache
        grad_pooled = TwoLayer.backward(self.params, self.prefix, mlp_cache, grad_out, grads)
        key = f"{self.prefix}.emb"
        update = scatter_rows(len(self.params[key]), index, weights[:, :, None] * grad_pooled[:, None, :])
        grads[key] = grads[key] + update if key in grads else update

    def encode(self, tokens: Sequence[int]) -> np.ndarray:
        out, _ = self.forward([tokens])
        return out[0]
