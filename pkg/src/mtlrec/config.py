"""Configuration blocks for every stage, named presets, hashing and seed derivation."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

CONFIG_ENV_VAR = "MTLREC_CONFIG"
DAY = 86400


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


@dataclass
class SyntheticSpec:
    num_topics: int = 20  # planted topics G
    num_videos: int = 5000
    num_users: int = 500
    num_tags: int = 200
    vocab_size: int = 500
    d_img: int = 32
    topics_per_primary: int = 5
    topics_per_secondary: int = 2
    max_topics_per_video: int = 3
    same_primary_prob: float = 0.8
    tags_per_topic: tuple[int, int] = (1, 3)
    tag_concentration: float = 1.0
    tag_noise_prob: float = 0.05
    title_length: tuple[int, int] = (6, 12)
    title_topic_prob: float = 0.5
    noise_scale: float = 1.2
    horizon_days: int = 6
    back_catalog_fraction: float = 0.5
    user_topics: tuple[int, int] = (1, 3)
    topic_popularity_skew: float = 1.0
    seed: int = 7

    def validate(self) -> None:
        for name in ("num_topics", "num_videos", "num_users", "num_tags", "vocab_size", "d_img",
                     "topics_per_primary", "topics_per_secondary", "max_topics_per_video", "horizon_days"):
            _require(getattr(self, name) > 0, f"synthetic.{name} must be positive")
        _require(self.noise_scale >= 0, "synthetic.noise_scale must be non-negative")
        _require(0 <= self.title_topic_prob <= 1, "synthetic.title_topic_prob must lie in [0, 1]")
        _require(0 <= self.back_catalog_fraction <= 1, "synthetic.back_catalog_fraction must lie in [0, 1]")
        _require(self.num_tags >= self.num_topics, "synthetic.num_tags must be >= num_topics")
        _require(self.vocab_size >= 2 * self.num_topics, "synthetic.vocab_size must be >= 2 * num_topics")
        _require(1 <= self.max_topics_per_video <= self.num_topics, "synthetic.max_topics_per_video out of range")
        lo, hi = self.title_length
        _require(0 <= lo <= hi, "synthetic.title_length must be an ordered pair")
        lo, hi = self.user_topics
        _require(1 <= lo <= hi <= self.num_topics, "synthetic.user_topics out of range")

    @property
    def num_primary(self) -> int:
        return -(-self.num_topics // self.topics_per_primary)

    @property
    def num_secondary(self) -> int:
        return -(-self.num_topics // self.topics_per_secondary)


@dataclass
class ClickConfig:
    num_days: int = 6
    events_per_user_day: int = 30
    slope: float = 8.0
    bias: float = -3.5
    mean_watch: float = 60.0

    def validate(self) -> None:
        _require(self.num_days > 0, "clicks.num_days must be positive")
        _require(self.events_per_user_day > 0, "clicks.events_per_user_day must be positive")
        _require(self.mean_watch > 0, "clicks.mean_watch must be positive")


@dataclass
class WalkConfig:
    walk_length: int = 40
    walks_per_node: int = 10
    window: int = 5
    negatives: int = 5
    dim: int = 32
    learning_rate: float = 0.025
    epochs: int = 5
    batch_size: int = 512
    seed: int = 0

    def validate(self) -> None:
        _require(self.walk_length >= 2, "walk.walk_length must be >= 2")
        for name in ("walks_per_node", "window", "negatives", "dim", "epochs", "batch_size"):
            _require(getattr(self, name) > 0, f"walk.{name} must be positive")
        _require(self.learning_rate > 0, "walk.learning_rate must be positive")


@dataclass
class MmoeConfig:
    num_experts: int = 12
    d_enc: int = 32
    encoder_hidden: int = 32
    d_tok: int = 32
    expert_hidden: int = 32
    d_expert: int = 32
    tower_hidden: int = 32

    def validate(self) -> None:
        for f in fields(self):
            _require(getattr(self, f.name) > 0, f"mmoe.{f.name} must be positive")


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 300
    iterations: int = 400
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        _require(self.learning_rate >= 0, "learning_rate must be non-negative")
        _require(self.batch_size > 0 and self.iterations > 0, "batch_size and iterations must be positive")
        _require(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "Adam betas must lie in [0, 1)")


@dataclass
class TopicConfig:
    num_clusters: int = 20
    threshold: float = 0.6  # tau_3, minimum cosine similarity
    max_topics: int = 8
    max_iters: int = 100
    restarts: int = 20

    def validate(self) -> None:
        _require(self.num_clusters >= 1, "topics.num_clusters must be >= 1")
        _require(0 <= self.threshold <= 1, "topics.threshold must lie in [0, 1]")
        _require(self.max_topics >= 1 and self.max_iters >= 1 and self.restarts >= 1,
                 "topics.max_topics, max_iters and restarts must be positive")


@dataclass
class QueueConfig:
    min_exposures: int = 10  # tau_1
    min_ctr: float = 0.07  # tau_2
    fresh_fraction: float = 0.10
    fresh_age_days: float = 2.0

    def validate(self) -> None:
        _require(self.min_exposures >= 0, "queue.min_exposures must be >= 0")
        _require(0 <= self.min_ctr <= 1, "queue.min_ctr must lie in [0, 1]")
        _require(0 <= self.fresh_fraction < 1, "queue.fresh_fraction must lie in [0, 1)")
        _require(self.fresh_age_days >= 0, "queue.fresh_age_days must be >= 0")


@dataclass
class RetrievalConfig:
    history_window: int = 32  # N1
    top_topics: int = 4  # N2
    num_candidates: int = 60  # N3

    def validate(self, num_clusters: int | None = None) -> None:
        _require(self.history_window > 0 and self.top_topics > 0 and self.num_candidates > 0,
                 "retrieval counts must be positive")
        if num_clusters is not None:
            _require(self.top_topics <= num_clusters, "retrieval.top_topics must be <= topics.num_clusters")


@dataclass
class FeatureSpec:
    user_id: bool = True
    video_id: bool = True
    history: bool = True
    tags: bool = False
    topics: bool = True
    user_topics: bool = True
    cover: bool = False
    topic_cross: bool = True  # user_topics * topics, when both are on
    id_dim: int = 16
    tag_dim: int = 16
    topic_dim: int = 8
    cover_dim: int = 128
    history_window: int = 32

    def validate(self) -> None:
        _require(any((self.user_id, self.video_id, self.history, self.tags, self.topics, self.cover)),
                 "features: at least one family must be enabled")
        for name in ("id_dim", "tag_dim", "topic_dim", "cover_dim", "history_window"):
            _require(getattr(self, name) > 0, f"features.{name} must be positive")

    def without_topics(self) -> "FeatureSpec":
        return dataclasses.replace(self, topics=False, user_topics=False)


@dataclass
class RankerConfig:
    variant: str = "emlp"  # lr | emlp | wide_deep
    hidden: tuple[int, int] = (64, 32)
    learning_rate: float = 0.003
    batch_size: int = 256
    epochs: int = 3
    replay_epochs: int = 2
    init_scale: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        _require(self.variant in ("lr", "emlp", "wide_deep"), f"ranker.variant {self.variant!r} unknown")
        _require(self.learning_rate >= 0, "ranker.learning_rate must be non-negative")
        _require(self.batch_size > 0 and self.epochs > 0 and self.replay_epochs > 0,
                 "ranker batch_size/epochs must be positive")


@dataclass
class AbConfig:
    num_groups: int = 8
    days: int = 7
    page_size: int = 10
    sessions_per_day: int = 4
    max_pages: int = 20  # per session
    session_budget: float = 2.0  # pages, scaled by user activity
    click_credit: float = 0.25  # budget returned per click
    seed: int = 0

    def validate(self) -> None:
        _require(self.num_groups >= 2 and self.days > 0, "ab.num_groups >= 2 and ab.days > 0 required")
        _require(self.page_size > 0 and self.max_pages > 0 and self.sessions_per_day > 0,
                 "ab.page_size, ab.max_pages and ab.sessions_per_day must be positive")
        _require(self.session_budget > 0 and 0 <= self.click_credit < 1,
                 "ab.session_budget must be positive and ab.click_credit in [0, 1)")


@dataclass
class EvalConfig:
    replay_days: int = 5
    timing_samples: int = 2000

    def validate(self) -> None:
        _require(self.replay_days > 0, "eval.replay_days must be positive")
        _require(self.timing_samples >= 1000, "eval.timing_samples must be >= 1000")


@dataclass
class PipelineConfig:
    preset: str = "desk"
    seed: int = 7
    artifact_dir: str = "artifacts"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    clicks: ClickConfig = field(default_factory=ClickConfig)
    walk: WalkConfig = field(default_factory=WalkConfig)
    mmoe: MmoeConfig = field(default_factory=MmoeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    topics: TopicConfig = field(default_factory=TopicConfig)
    queue: QueueConfig = field(default_factory=QueueConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    features: FeatureSpec = field(default_factory=FeatureSpec)
    ranker: RankerConfig = field(default_factory=RankerConfig)
    ab: AbConfig = field(default_factory=AbConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        _require(self.preset in PRESETS, f"unknown preset {self.preset!r}")
        for name in SECTIONS:
            block = getattr(self, name)
            if name == "retrieval":
                block.validate(self.topics.num_clusters)
            else:
                block.validate()

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def section_hash(self, *names: str) -> str:
        payload = {"seed": self.seed, "preset": self.preset}
        payload.update({n: dataclasses.asdict(getattr(self, n)) for n in sorted(names)})
        blob = json.dumps(payload, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


SECTIONS = ("synthetic", "clicks", "walk", "mmoe", "train", "topics", "queue",
            "retrieval", "features", "ranker", "ab", "eval")


def derive_seed(seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def desk_preset() -> PipelineConfig:
    return PipelineConfig()


def production_preset() -> PipelineConfig:
    """Production-scale values; loadable but not meant to run on a desk machine."""
    cfg = PipelineConfig(preset="paper")
    cfg.synthetic = SyntheticSpec(num_topics=6000, num_videos=3_000_000, num_users=1_500_000,
                                  num_tags=12000, vocab_size=30000, d_img=128,
                                  topics_per_primary=120, topics_per_secondary=17)
    cfg.walk.walk_length = 100
    cfg.mmoe.num_experts = 12
    cfg.train = TrainConfig(learning_rate=0.001, batch_size=300, iterations=200)
    cfg.topics = TopicConfig(num_clusters=6000, threshold=0.6)
    cfg.queue = QueueConfig(min_exposures=10, min_ctr=0.07)
    cfg.retrieval = RetrievalConfig(history_window=128, top_topics=4, num_candidates=600)
    cfg.features.history_window = 128
    cfg.ab.num_groups = 8
    return cfg


PRESETS = {"desk": desk_preset, "paper": production_preset}

# class counts of the production data set (primary, secondary, tags)
PRODUCTION_CLASS_COUNTS = (50, 367, 12000)


def _merge(obj: Any, values: dict[str, Any], where: str) -> Any:
    if not dataclasses.is_dataclass(obj):
        return values
    known = {f.name: f for f in fields(obj)}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {where}{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key} must be a mapping")
            _merge(current, value, f"{where}{key}.")
        else:
            if isinstance(current, tuple):
                value = tuple(value)
            elif isinstance(current, bool) and not isinstance(value, bool):
                raise ConfigError(f"config key {where}{key} must be a boolean")
            elif isinstance(current, int) and not isinstance(current, bool):
                if isinstance(value, float) and value.is_integer():
                    value = int(value)
                if not isinstance(value, int) or isinstance(value, bool):
                    raise ConfigError(f"config key {where}{key} must be an integer")
            elif isinstance(current, float):
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ConfigError(f"config key {where}{key} must be a number")
                value = float(value)
            setattr(obj, key, value)
    return obj


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from None
    return key.strip(), value


def _nest(key: str, value: Any) -> dict[str, Any]:
    out: dict[str, Any] = {}
    node = out
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def load_config(path: str | os.PathLike | None = None, overrides: list[str] | None = None,
                preset: str | None = None, seed: int | None = None) -> PipelineConfig:
    """Preset defaults, then the YAML file, then ``key=value`` overrides, then explicit flags."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    data: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {p}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {p} must contain a mapping")
    name = preset or data.get("preset", "desk")
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    cfg = PRESETS[name]()
    data = {k: v for k, v in data.items() if k != "preset"}
    _merge(cfg, data, "")
    for text in overrides or []:
        key, value = parse_override(text)
        _merge(cfg, _nest(key, value), "")
    if seed is not None:
        cfg.seed = seed
    cfg.synthetic.seed = cfg.seed
    cfg.validate()
    return cfg


def copy_config(cfg: PipelineConfig) -> PipelineConfig:
    return copy.deepcopy(cfg)
