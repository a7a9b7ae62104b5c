"""Multi-gate mixture-of-experts over the joint cover/title representation.

Three softmax towers (primary class, secondary class, tag) share ``H`` experts;
each task mixes the experts with its own softmax gate. The loss backpropagates
into both modality encoders, so the joint representation ``z`` is fine-tuned
end to end.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import MmoeConfig, TrainConfig
from .corpus import Video, cover_matrix, label_matrix
from .encoders import ImageEncoder, TitleEncoder
from .errors import ConfigError, NumericError
from .nn import Adam, Params, TwoLayer, params_from_json, params_to_json, softmax, softmax_backward, uniform_init

NUM_TASKS = 3
PROB_FLOOR = 1e-12


@dataclass
class Batch:
    cover: np.ndarray
    titles: list
    targets: list[np.ndarray] = field(default_factory=list)

    def __len__(self):
        return len(self.cover)


class MmoeNetwork:
    def __init__(self, config: MmoeConfig, d_img: int, vocab_size: int, class_counts: Sequence[int],
                 seed: int = 0, zero_encoder_output: bool = False):
        if len(class_counts) != NUM_TASKS:
            raise ConfigError(f"MMoE needs exactly {NUM_TASKS} class counts, got {len(class_counts)}")
        config.validate()
        self.config = config
        self.d_img, self.vocab_size = d_img, vocab_size
        self.class_counts = tuple(int(m) for m in class_counts)
        self.seed = seed
        rng = np.random.default_rng(seed)
        c = config
        self.image = ImageEncoder(d_img, c.encoder_hidden, c.d_enc, rng, zero_last=zero_encoder_output)
        self.title = TitleEncoder(vocab_size, c.d_tok, c.encoder_hidden, c.d_enc, rng, zero_last=zero_encoder_output)
        dz, H = 2 * c.d_enc, c.num_experts
        own: Params = {
            "expert.W1": uniform_init(rng, dz, (H, dz, c.expert_hidden)),
            "expert.b1": uniform_init(rng, dz, (H, c.expert_hidden)),
            "expert.W2": uniform_init(rng, c.expert_hidden, (H, c.expert_hidden, c.d_expert)),
            "expert.b2": uniform_init(rng, c.expert_hidden, (H, c.d_expert)),
        }
        for k in range(NUM_TASKS):
            own[f"gate{k}.W"] = uniform_init(rng, dz, (dz, H))
            own[f"gate{k}.b"] = uniform_init(rng, dz, H)
        for k, m in enumerate(self.class_counts):
            own.update(TwoLayer.init(rng, f"tower{k}", c.d_expert, c.tower_hidden, m))
        self.own = own
        self.params: Params = {**self.image.params, **self.title.params, **own}

    @property
    def d_z(self) -> int:
        return 2 * self.config.d_enc

    # forward / backward ------------------------------------------------

    def forward_batch(self, cover: np.ndarray, titles: Sequence[Sequence[int]]):
        zi, img_cache = self.image.forward(cover)
        zt, title_cache = self.title.forward(titles)
        z = np.concatenate([zi, zt], axis=1)
        P = self.params
        # expert tensors are laid out (H, B, width)
        h = np.tanh(np.matmul(z[None], P["expert.W1"]) + P["expert.b1"][:, None, :])
        experts = np.matmul(h, P["expert.W2"]) + P["expert.b2"][:, None, :]
        gates, probs, tower_caches, fused = [], [], [], []
        for k in range(NUM_TASKS):
            g = softmax(z @ P[f"gate{k}.W"] + P[f"gate{k}.b"])
            f_k = (g.T[:, :, None] * experts).sum(axis=0)
            logits, tc = TwoLayer.forward(P, f"tower{k}", f_k)
            gates.append(g)
            fused.append(f_k)
            tower_caches.append(tc)
            probs.append(softmax(logits))
        cache = (img_cache, title_cache, z, h, experts, gates, tower_caches)
        return z, probs, gates, cache

    def backward(self, cache, probs, grad_probs) -> Params:
        img_cache, title_cache, z, h, experts, gates, tower_caches = cache
        P = self.params
        grads: Params = {}
        grad_z = np.zeros_like(z)
        grad_experts = np.zeros_like(experts)
        for k in range(NUM_TASKS):
            grad_logits = softmax_backward(probs[k], grad_probs[k])
            grad_f = TwoLayer.backward(P, f"tower{k}", tower_caches[k], grad_logits, grads)
            g = gates[k]
            grad_g = (experts * grad_f[None]).sum(axis=2).T
            grad_experts += g.T[:, :, None] * grad_f[None]
            grad_gl = softmax_backward(g, grad_g)
            grads[f"gate{k}.W"] = z.T @ grad_gl
            grads[f"gate{k}.b"] = grad_gl.sum(axis=0)
            grad_z += grad_gl @ P[f"gate{k}.W"].T
        grads["expert.W2"] = np.matmul(h.transpose(0, 2, 1), grad_experts)
        grads["expert.b2"] = grad_experts.sum(axis=1)
        grad_pre = np.matmul(grad_experts, P["expert.W2"].transpose(0, 2, 1)) * (1.0 - h * h)
        grads["expert.W1"] = np.matmul(z.T[None], grad_pre)
        grads["expert.b1"] = grad_pre.sum(axis=1)
        grad_z += np.matmul(grad_pre, P["expert.W1"].transpose(0, 2, 1)).sum(axis=0)
        d = self.config.d_enc
        self.image.backward(img_cache, grad_z[:, :d], grads)
        self.title.backward(title_cache, grad_z[:, d:], grads)
        return grads

    def loss_and_grads(self, batch: Batch) -> tuple[float, Params]:
        z, probs, _, cache = self.forward_batch(batch.cover, batch.titles)
        total = 0.0
        grad_probs = []
        n = len(batch)
        for p, y in zip(probs, batch.targets):
            safe = np.maximum(p, PROB_FLOOR)
            total += float(-(y * np.log(safe)).sum())
            grad_probs.append(np.where(p > PROB_FLOOR, -y / safe, 0.0) / n)
        return total / n, self.backward(cache, probs, grad_probs)

    # single-video API ----------------------------------------------------

    def forward(self, video: Video) -> tuple[np.ndarray, list[np.ndarray]]:
        z, probs, _, _ = self.forward_batch(np.array([video.cover_feature]), [video.title_tokens])
        return z[0], [p[0] for p in probs]

    def gate_weights(self, video: Video) -> list[np.ndarray]:
        _, _, gates, _ = self.forward_batch(np.array([video.cover_feature]), [video.title_tokens])
        return [g[0] for g in gates]

    def joint_representation(self, videos: Sequence[Video] | Video, batch_size: int = 1024) -> np.ndarray:
        """The encoder concatenation ``z`` (one row per video)."""
        single = isinstance(videos, Video)
        seq = [videos] if single else list(videos)
        out = []
        for start in range(0, len(seq), batch_size):
            chunk = seq[start:start + batch_size]
            zi, _ = self.image.forward(cover_matrix(chunk))
            zt, _ = self.title.forward([v.title_tokens for v in chunk])
            out.append(np.concatenate([zi, zt], axis=1))
        z = np.concatenate(out, axis=0) if out else np.zeros((0, self.d_z))
        return z[0] if single else z

    # persistence -----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "kind": "mmoe",
            "hyperparameters": self.config.__dict__.copy(),
            "d_img": self.d_img,
            "vocab_size": self.vocab_size,
            "class_counts": list(self.class_counts),
            "seed": self.seed,
            "params": params_to_json(self.params),
        }

    @classmethod
    def from_json(cls, blob: dict) -> "MmoeNetwork":
        net = cls(MmoeConfig(**blob["hyperparameters"]), blob["d_img"], blob["vocab_size"],
                  blob["class_counts"], seed=blob["seed"])
        loaded = params_from_json(blob["params"])
        for k, v in loaded.items():
            net.params[k][...] = v
        return net


def loss(probs: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> float:
    """Summed cross-entropy of the three tasks for one video (targets may be multi-hot)."""
    if len(probs) != len(targets):
        raise ValueError("need one target vector per task")
    total = 0.0
    for k, (p, y) in enumerate(zip(probs, targets)):
        p = np.asarray(p, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if p.shape != y.shape:
            raise ValueError(f"task {k + 1}: prediction length {p.shape} != label length {y.shape}")
        total -= float((y * np.log(np.maximum(p, PROB_FLOOR))).sum())
    return total


def make_batch(videos: Sequence[Video], class_counts: Sequence[int]) -> Batch:
    return Batch(cover_matrix(videos), [v.title_tokens for v in videos],
                 [label_matrix(videos, k + 1, m) for k, m in enumerate(class_counts)])


def train(net: MmoeNetwork, videos: Sequence[Video], config: TrainConfig) -> list[float]:
    """Mini-batch Adam on shuffled batches; returns the loss of every iteration."""
    if not videos:
        raise ConfigError("cannot train MMoE on an empty corpus")
    config.validate()
    data = make_batch(videos, net.class_counts)
    rng = np.random.default_rng(config.seed)
    opt = Adam(net.params, config.learning_rate, config.beta1, config.beta2, config.eps)
    n = len(videos)
    bs = min(config.batch_size, n)
    order = rng.permutation(n)
    cursor = 0
    curve = []
    for _ in range(config.iterations):
        if cursor + bs > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + bs]
        cursor += bs
        batch = Batch(data.cover[idx], [data.titles[i] for i in idx], [t[idx] for t in data.targets])
        value, grads = net.loss_and_grads(batch)
        if not np.isfinite(value):
            raise NumericError("non-finite MMoE loss during training")
        opt.step(net.params, grads)
        curve.append(value)
    return curve
