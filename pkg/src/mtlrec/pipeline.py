"""Stage graph, artifact workspace and the stage implementations behind the CLI.

Every stage owns a set of config sections. Its hash covers those sections and
the hashes of the stages it reads from, so changing an upstream setting makes
every downstream artifact stale. ``manifest.json`` records, per stage, the hash,
the derived seed and the sha256 of every file it wrote.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import io
from .config import DAY, PipelineConfig, derive_seed
from .corpus import attach_histories, generate_corpus, simulate_clicks
from .errors import MissingArtifactError, StaleArtifactError
from .eval import abtest, offline
from .eval.metrics import ari, nmi
from .eval.representation import compare_representations, ordering_holds
from .mmoe import MmoeNetwork, train as train_mmoe
from .ranking import FeatureIndex, Ranker, samples_from_log, train_ranker
from .retrieval import QueueSet, build_queues, global_entries, retrieve_candidates
from .tag_embedding import learn_tag_embeddings, tag_representations
from .topics import assign_all, fit_kmeans, topic_representations

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
REPORT = "report.json"
COST_REPORT = "cost_report.json"
HOLDOUT_FRACTION = 0.1


@dataclass(frozen=True)
class Stage:
    name: str
    sections: tuple[str, ...]
    requires: tuple[str, ...]
    outputs: tuple[str, ...]


STAGES: dict[str, Stage] = {s.name: s for s in (
    Stage("gen-corpus", ("synthetic", "clicks"), (),
          ("videos.jsonl", "users.jsonl", "clicks.jsonl", "ground_truth.json", "reports/gen-corpus.json")),
    Stage("build-tag-embeddings", ("walk",), ("gen-corpus",),
          ("tag_graph.jsonl", "tag_embeddings.tsv", "curves/tag_loss.csv", "reports/build-tag-embeddings.json")),
    Stage("train-mmoe", ("mmoe", "train"), ("gen-corpus",),
          ("mmoe_model.json", "split.json", "curves/mmoe_loss.csv", "reports/train-mmoe.json")),
    Stage("cluster-topics", ("topics",), ("build-tag-embeddings", "train-mmoe"),
          ("topic_model.json", "curves/inertia.csv", "reports/cluster-topics.json")),
    Stage("assign-topics", ("topics",), ("cluster-topics",),
          ("topic_assignments.jsonl", "reports/assign-topics.json")),
    Stage("build-queues", ("queue",), ("assign-topics",),
          ("queues.jsonl", "reports/build-queues.json")),
    Stage("train-ranker", ("features", "ranker"), ("assign-topics",),
          ("ranker_model.json", "curves/ranker_loss.csv", "reports/train-ranker.json")),
    Stage("evaluate-representation", ("eval", "topics"), ("build-tag-embeddings", "train-mmoe"),
          ("reports/evaluate-representation.json",)),
    Stage("replay", ("features", "ranker", "eval"), ("assign-topics",),
          ("curves/replay_auc.csv", "reports/replay.json")),
    Stage("ab-test", ("ab", "retrieval", "features", "ranker"), ("build-queues", "train-ranker"),
          ("reports/ab-test.json",)),
)}

PIPELINE_ORDER = tuple(STAGES)


def stage_hash(cfg: PipelineConfig, name: str) -> str:
    stage = STAGES[name]
    upstream = [stage_hash(cfg, dep) for dep in stage.requires]
    payload = json.dumps({"own": cfg.section_hash(*stage.sections), "upstream": upstream})
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def stage_seed(cfg: PipelineConfig, name: str) -> int:
    return derive_seed(cfg.seed, name)


class Workspace:
    def __init__(self, root, cfg: PipelineConfig):
        self.root = Path(root)
        self.cfg = cfg

    def path(self, name: str) -> Path:
        return self.root / name

    # manifest ------------------------------------------------------------------

    def manifest(self) -> dict:
        p = self.path(MANIFEST)
        if not p.exists():
            return {"stages": {}}
        return io.read_json(p)

    def require(self, name: str) -> None:
        """Fail unless ``name`` has run with the current configuration and its files are intact."""
        entry = self.manifest()["stages"].get(name)
        if entry is None:
            raise MissingArtifactError(f"missing artifacts of stage {name!r}; run `{name}` first", name)
        for fname, digest in entry["files"].items():
            p = self.path(fname)
            if not p.exists():
                raise MissingArtifactError(f"artifact {p} is missing; run `{name}` first", name)
            if io.file_digest(p) != digest:
                raise StaleArtifactError(f"artifact {p} changed since `{name}` wrote it; rerun `{name}`", name)
        if entry["config_hash"] != stage_hash(self.cfg, name):
            raise StaleArtifactError(
                f"artifacts of {name!r} were built with a different configuration "
                f"({entry['config_hash']} != {stage_hash(self.cfg, name)}); rerun `{name}`", name)

    def record(self, name: str) -> None:
        manifest = self.manifest()
        manifest["seed"] = self.cfg.seed
        manifest["preset"] = self.cfg.preset
        manifest["stages"][name] = {
            "config_hash": stage_hash(self.cfg, name),
            "seed": stage_seed(self.cfg, name),
            "files": {f: io.file_digest(self.path(f)) for f in STAGES[name].outputs},
        }
        manifest["stages"] = {k: manifest["stages"][k] for k in PIPELINE_ORDER if k in manifest["stages"]}
        io.write_json(self.path(MANIFEST), manifest)

    # report ----------------------------------------------------------------------

    def write_report(self) -> None:
        sections = {}
        for name in PIPELINE_ORDER:
            p = self.path(f"reports/{name}.json")
            if p.exists():
                sections[name] = io.read_json(p)
        stages = self.manifest()["stages"]
        meta = {"preset": self.cfg.preset, "seed": self.cfg.seed,
                "config_hash": self.cfg.section_hash(*STAGE_SECTIONS),
                "stage_hashes": {k: v["config_hash"] for k, v in stages.items()}}
        _atomic_json(self.path(REPORT), {"metadata": meta, "sections": sections})

    # artifact loading --------------------------------------------------------------

    def videos(self):
        return io.load_videos(self.path("videos.jsonl"))

    def users(self):
        return io.load_users(self.path("users.jsonl"))

    def clicks(self):
        return io.load_clicks(self.path("clicks.jsonl"))

    def truth(self):
        return io.load_ground_truth(self.path("ground_truth.json"))

    def tag_table(self):
        return io.load_tag_embeddings(self.path("tag_embeddings.tsv"))

    def mmoe(self) -> MmoeNetwork:
        return MmoeNetwork.from_json(io.read_json(self.path("mmoe_model.json")))

    def topic_model(self):
        return io.topic_model_from_json(io.read_json(self.path("topic_model.json")))

    def assignments(self):
        return io.load_assignments(self.path("topic_assignments.jsonl"))

    def queues(self):
        return io.load_queues(self.path("queues.jsonl"))


STAGE_SECTIONS = tuple(sorted({s for st in STAGES.values() for s in st.sections}))


def _atomic_json(path: Path, obj: Any) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
    io._atomic_write(path, text)


def _summary(ws: Workspace, name: str, summary: dict) -> dict:
    _atomic_json(ws.path(f"reports/{name}.json"), summary)
    return summary


# stages ------------------------------------------------------------------------------

def gen_corpus(ws: Workspace) -> dict:
    cfg = ws.cfg
    videos, users, truth = generate_corpus(cfg.synthetic)
    clicks = simulate_clicks(videos, users, truth, cfg.clicks, stage_seed(cfg, "gen-corpus"))
    users = attach_histories(users, clicks)
    io.save_corpus(ws.root, videos, users)
    io.save_clicks(ws.path("clicks.jsonl"), clicks)
    io.save_ground_truth(ws.path("ground_truth.json"), truth)
    return _summary(ws, "gen-corpus", {
        "num_videos": len(videos), "num_users": len(users), "num_events": len(clicks),
        "num_days": clicks.num_days(), "ctr": clicks.ctr(),
        "mean_tags_per_video": float(np.mean([len(v.tags) for v in videos])),
        "mean_planted_topics_per_video": float(np.mean([len(t) for t in truth.video_topics.values()])),
    })


def build_tag_embeddings(ws: Workspace) -> dict:
    cfg = ws.cfg
    videos = ws.videos()
    graph, table = learn_tag_embeddings(videos, cfg.walk, cfg.synthetic.num_tags, stage_seed(cfg, "build-tag-embeddings"))
    io.save_tag_graph(ws.path("tag_graph.jsonl"), graph)
    io.save_tag_embeddings(ws.path("tag_embeddings.tsv"), table)
    io.save_curve(ws.path("curves/tag_loss.csv"), enumerate(table.loss_curve, start=1), ("epoch", "value"))
    return _summary(ws, "build-tag-embeddings", {
        "num_edges": graph.num_edges, "total_weight": int(graph.weights.sum()),
        "loss_first_epoch": table.loss_curve[0], "loss_last_epoch": table.loss_curve[-1],
    })


def holdout_split(video_ids, seed: int) -> tuple[list[int], list[int]]:
    order = np.random.default_rng(seed).permutation(len(video_ids))
    n_hold = max(1, int(round(HOLDOUT_FRACTION * len(video_ids))))
    hold = sorted(int(video_ids[i]) for i in order[:n_hold])
    train = sorted(int(video_ids[i]) for i in order[n_hold:])
    return train, hold


def class_counts(cfg: PipelineConfig) -> tuple[int, int, int]:
    s = cfg.synthetic
    return s.num_primary, s.num_secondary, s.num_tags


def train_mmoe_stage(ws: Workspace) -> dict:
    cfg = ws.cfg
    videos = ws.videos()
    seed = stage_seed(cfg, "train-mmoe")
    train_ids, hold_ids = holdout_split([v.video_id for v in videos], seed)
    keep = set(train_ids)
    net = MmoeNetwork(cfg.mmoe, cfg.synthetic.d_img, cfg.synthetic.vocab_size, class_counts(cfg), seed=seed)
    curve = train_mmoe(net, [v for v in videos if v.video_id in keep], replace(cfg.train, seed=seed))
    io.write_json(ws.path("mmoe_model.json"), net.to_json())
    io.write_json(ws.path("split.json"), {"train": train_ids, "holdout": hold_ids})
    io.save_curve(ws.path("curves/mmoe_loss.csv"), enumerate(curve, start=1), ("iteration", "value"))
    return _summary(ws, "train-mmoe", {
        "train_videos": len(train_ids), "holdout_videos": len(hold_ids),
        "loss_first_iteration": curve[0], "loss_last_iteration": curve[-1],
    })


def cluster_topics(ws: Workspace) -> dict:
    cfg = ws.cfg
    videos = ws.videos()
    reps = topic_representations(tag_representations(videos, ws.tag_table()), ws.mmoe().joint_representation(videos))
    t = cfg.topics
    model = fit_kmeans(reps, t.num_clusters, t.max_iters, stage_seed(cfg, "cluster-topics"), t.restarts, t.threshold)
    io.write_json(ws.path("topic_model.json"), io.topic_model_json(model))
    io.save_curve(ws.path("curves/inertia.csv"), enumerate(model.inertia_curve, start=1), ("iteration", "value"))
    curve = model.inertia_curve
    return _summary(ws, "cluster-topics", {
        "K": model.num_topics, "inertia": model.inertia, "lloyd_iterations": len(curve),
        "inertia_monotone": all(b <= a + 1e-9 for a, b in zip(curve, curve[1:])),
    })


def assign_topics_stage(ws: Workspace) -> dict:
    cfg = ws.cfg
    videos = ws.videos()
    model = ws.topic_model()
    reps = topic_representations(tag_representations(videos, ws.tag_table()), ws.mmoe().joint_representation(videos))
    assignments = assign_all(reps, [v.video_id for v in videos], model, cfg.topics.max_topics)
    io.save_assignments(ws.path("topic_assignments.jsonl"), [assignments[v.video_id] for v in videos])
    truth = ws.truth()
    nearest = [assignments[v.video_id].topic_ids[0] for v in videos]
    planted = [truth.dominant_topic(v.video_id) for v in videos]
    sizes = np.bincount([t for a in assignments.values() for t in a.topic_ids], minlength=model.num_topics)
    return _summary(ws, "assign-topics", {
        "mean_topics_per_video": float(np.mean([len(a.topic_ids) for a in assignments.values()])),
        "max_topics_per_video": int(max(len(a.topic_ids) for a in assignments.values())),
        "planted_topic_ari": ari(planted, nearest), "planted_topic_nmi": nmi(planted, nearest),
        "videos_per_topic_min": int(sizes.min()), "videos_per_topic_max": int(sizes.max()),
    })


def build_queue_set(ws: Workspace, videos=None, assignments=None) -> QueueSet:
    cfg = ws.cfg
    videos = videos if videos is not None else ws.videos()
    assignments = assignments if assignments is not None else ws.assignments()
    clicks = ws.clicks()
    now = clicks.num_days() * DAY
    return build_queues(assignments, clicks, cfg.queue, now, stage_seed(cfg, "build-queues"),
                        {v.video_id: v.publish_time for v in videos})


def build_queues_stage(ws: Workspace) -> dict:
    qs = build_queue_set(ws)
    io.save_queues(ws.path("queues.jsonl"), qs.queues)
    lengths = [len(q) for q in qs.queues.values()]
    fresh = sum(q.fresh_count for q in qs.queues.values())
    return _summary(ws, "build-queues", {
        "num_queues": len(lengths), "empty_queues": sum(1 for n in lengths if n == 0),
        "mean_queue_length": float(np.mean(lengths)) if lengths else 0.0,
        "fresh_entries": fresh, "total_entries": int(sum(lengths)),
        "global_queue_length": len(qs.global_queue),
    })


def feature_index(ws: Workspace, videos=None, users=None, assignments=None) -> FeatureIndex:
    cfg = ws.cfg
    videos = videos if videos is not None else ws.videos()
    users = users if users is not None else ws.users()
    assignments = assignments if assignments is not None else ws.assignments()
    return FeatureIndex(videos, assignments, [u.user_id for u in users], cfg.synthetic.num_tags,
                        cfg.topics.num_clusters)


def ranker_factory(cfg: PipelineConfig, index: FeatureIndex, seed: int) -> Callable[[str, Any], Ranker]:
    def make(variant, spec):
        return Ranker(variant, spec, index, cfg.ranker.hidden, seed, cfg.ranker.init_scale)
    return make


def train_ranker_stage(ws: Workspace) -> dict:
    cfg = ws.cfg
    index = feature_index(ws)
    samples = samples_from_log(ws.clicks(), index, cfg.features.history_window)
    seed = stage_seed(cfg, "train-ranker")
    ranker = ranker_factory(cfg, index, seed)(cfg.ranker.variant, cfg.features)
    curve, _ = train_ranker(ranker, samples, replace(cfg.ranker, seed=seed))
    io.write_json(ws.path("ranker_model.json"), ranker.to_json())
    io.save_curve(ws.path("curves/ranker_loss.csv"), enumerate(curve), ("epoch", "value"))
    return _summary(ws, "train-ranker", {
        "variant": ranker.variant, "feature_width": ranker.width, "train_events": len(samples),
        "loss_initial": curve[0], "loss_final": curve[-1],
    })


def load_ranker(ws: Workspace, index: FeatureIndex) -> Ranker:
    return Ranker.from_json(io.read_json(ws.path("ranker_model.json")), index)


def evaluate_representation(ws: Workspace) -> dict:
    cfg = ws.cfg
    videos = ws.videos()
    hold = set(io.read_json(ws.path("split.json"))["holdout"])
    held = [v for v in videos if v.video_id in hold]
    results = compare_representations(held, ws.truth(), cfg.synthetic, ws.mmoe(), ws.tag_table(),
                                      seed=stage_seed(cfg, "evaluate-representation"), restarts=cfg.topics.restarts)
    checks = {f"{m}_ordering": ordering_holds(results, m)
              for m in ("PC.ari", "PC.nmi", "SC.ari", "SC.nmi", "distance_ratio")}
    return _summary(ws, "evaluate-representation", {"num_videos": len(held), "configurations": results,
                                                    "orderings": checks})


def replay_stage(ws: Workspace) -> dict:
    cfg = ws.cfg
    index = feature_index(ws)
    clicks = ws.clicks()
    samples = samples_from_log(clicks, index, cfg.features.history_window)
    seed = stage_seed(cfg, "replay")
    make = ranker_factory(cfg, index, seed)
    rcfg = replace(cfg.ranker, seed=seed)
    table2 = offline.ablation(make, samples, cfg.features, rcfg)
    num_days = min(cfg.eval.replay_days, clicks.num_days() - 1)
    arms, rankers = {}, {}
    for name, spec in offline.replay_arms(cfg.features).items():
        ranker = make(cfg.ranker.variant, spec)
        arms[name] = offline.offline_replay(ranker, samples, rcfg, num_days).to_json()
        arms[name]["feature_width"] = ranker.width
        rankers[name] = ranker
    io.save_curve(ws.path("curves/replay_auc.csv"),
                  [(d, arms[a]["auc"][i] if arms[a]["auc"][i] is not None else "", a)
                   for a in arms for i, d in enumerate(arms[a]["days"])], ("day", "value", "arm"))
    cost = offline.scoring_cost(rankers, samples, cfg.eval.timing_samples, seed=seed)
    base = cost["baseline"]["median_seconds_per_sample"]
    for c in cost.values():
        c["increment_seconds_per_sample"] = c["median_seconds_per_sample"] - base
    # timings vary from run to run, so they live outside the deterministic report
    _atomic_json(ws.path(COST_REPORT), cost)
    return _summary(ws, "replay", {
        "ablation": table2, "arms": arms,
        "feature_widths": {n: r.width for n, r in rankers.items()},
    })


def ab_test_stage(ws: Workspace) -> dict:
    cfg = ws.cfg
    videos, users, assignments = ws.videos(), ws.users(), ws.assignments()
    index = feature_index(ws, videos, users, assignments)
    clicks = ws.clicks()
    seed = stage_seed(cfg, "ab-test")
    topic_ranker = load_ranker(ws, index)
    base_spec = cfg.features.without_topics()
    baseline_ranker = ranker_factory(cfg, index, seed)(cfg.ranker.variant, base_spec)
    train_ranker(baseline_ranker, samples_from_log(clicks, index, cfg.features.history_window),
                 replace(cfg.ranker, seed=seed))
    queues = build_queue_set(ws, videos, assignments)
    sim = abtest.Simulator(ws.truth(), assignments, cfg.clicks, cfg.retrieval, replace(cfg.ab, seed=seed), seed)
    control = abtest.Pipeline("baseline", "global", baseline_ranker)
    arms = [abtest.Pipeline("null", "global", baseline_ranker),
            abtest.Pipeline("recall_topic", "topic", baseline_ranker),
            abtest.Pipeline("baseline_topic", "topic", topic_ranker)]
    result = abtest.ab_test(sim, control, arms, users, queues, clicks.num_days())
    return _summary(ws, "ab-test", result.to_json())


RUNNERS: dict[str, Callable[[Workspace], dict]] = {
    "gen-corpus": gen_corpus,
    "build-tag-embeddings": build_tag_embeddings,
    "train-mmoe": train_mmoe_stage,
    "cluster-topics": cluster_topics,
    "assign-topics": assign_topics_stage,
    "build-queues": build_queues_stage,
    "train-ranker": train_ranker_stage,
    "evaluate-representation": evaluate_representation,
    "replay": replay_stage,
    "ab-test": ab_test_stage,
}


def run_stage(ws: Workspace, name: str) -> dict:
    for dep in STAGES[name].requires:
        ws.require(dep)
    log.info("running %s", name)
    start = time.perf_counter()
    summary = RUNNERS[name](ws)
    ws.record(name)
    ws.write_report()
    log.info("finished %s in %.2fs", name, time.perf_counter() - start)
    return summary


def run_all(ws: Workspace) -> dict:
    for name in PIPELINE_ORDER:
        run_stage(ws, name)
    return io.read_json(ws.path(REPORT))


def retrieve_for_user(ws: Workspace, user_id: int, ranked: bool = False) -> list[int]:
    ws.require("build-queues")
    users = {u.user_id: u for u in ws.users()}
    if user_id not in users:
        raise KeyError(f"unknown user id {user_id}")
    assignments = ws.assignments()
    queues = ws.queues()
    candidates = retrieve_candidates(users[user_id], queues, ws.cfg.retrieval, assignments,
                                     fallback=global_entries(queues))
    if ranked:
        ws.require("train-ranker")
        candidates = load_ranker(ws, feature_index(ws, assignments=assignments)).rank(users[user_id], candidates)
    return candidates
