"""Small numpy building blocks with hand-written backward passes."""
from __future__ import annotations

import numpy as np

Params = dict[str, np.ndarray]


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(p: np.ndarray, grad_p: np.ndarray, axis: int = -1) -> np.ndarray:
    return p * (grad_p - (p * grad_p).sum(axis=axis, keepdims=True))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def scatter_rows(num_rows: int, rows: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Sum ``values`` (one row per index) into a ``(num_rows, d)`` zero matrix; a fast ``np.add.at``."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    d = values.shape[-1]
    values = values.reshape(len(rows), d)
    flat = (rows[:, None] * d + np.arange(d)).ravel()
    return np.bincount(flat, weights=values.ravel(), minlength=num_rows * d).reshape(num_rows, d)


def dense_init(rng: np.random.Generator, prefix: str, d_in: int, d_out: int, zero: bool = False) -> Params:
    if zero:
        return {f"{prefix}.W": np.zeros((d_in, d_out)), f"{prefix}.b": np.zeros(d_out)}
    return {f"{prefix}.W": uniform_init(rng, d_in, (d_in, d_out)),
            f"{prefix}.b": uniform_init(rng, d_in, d_out)}


class TwoLayer:
    """``tanh(x W1 + b1) W2 + b2`` as pure functions over a parameter dict."""

    @staticmethod
    def init(rng, prefix: str, d_in: int, d_hidden: int, d_out: int, zero_last: bool = False) -> Params:
        params = dense_init(rng, f"{prefix}.l1", d_in, d_hidden)
        params.update(dense_init(rng, f"{prefix}.l2", d_hidden, d_out, zero=zero_last))
        return params

    @staticmethod
    def forward(params: Params, prefix: str, x: np.ndarray):
        h = np.tanh(x @ params[f"{prefix}.l1.W"] + params[f"{prefix}.l1.b"])
        out = h @ params[f"{prefix}.l2.W"] + params[f"{prefix}.l2.b"]
        return out, (x, h)

    @staticmethod
    def backward(params: Params, prefix: str, cache, grad_out: np.ndarray, grads: Params) -> np.ndarray:
        x, h = cache
        grads[f"{prefix}.l2.W"] = grads.get(f"{prefix}.l2.W", 0) + h.T @ grad_out
        grads[f"{prefix}.l2.b"] = grads.get(f"{prefix}.l2.b", 0) + grad_out.sum(axis=0)
        grad_pre = (grad_out @ params[f"{prefix}.l2.W"].T) * (1.0 - h * h)
        grads[f"{prefix}.l1.W"] = grads.get(f"{prefix}.l1.W", 0) + x.T @ grad_pre
        grads[f"{prefix}.l1.b"] = grads.get(f"{prefix}.l1.b", 0) + grad_pre.sum(axis=0)
        return grad_pre @ params[f"{prefix}.l1.W"].T


class Adam:
    def __init__(self, params: Params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def params_to_json(params: Params) -> dict:
    return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(params.items())}


def params_from_json(blob: dict) -> Params:
    return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in blob.items()}
