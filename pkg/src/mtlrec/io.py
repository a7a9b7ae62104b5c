"""On-disk formats for every pipeline artifact.

Line-oriented artifacts are JSON Lines; models are single JSON documents. Python's
``json`` writes floats with ``repr``, which round-trips float64 exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .corpus import ClickLog, GroundTruth, User, Video
from .errors import NumericError, ParseError
from .retrieval import QueueEntry, TopicQueue
from .tag_embedding import TagEmbeddingTable, TagGraph
from .topics import TopicAssignment, TopicModel


# generic helpers ---------------------------------------------------------------

def dumps(obj: Any) -> str:
    try:
        return json.dumps(obj, allow_nan=False, separators=(",", ":"))
    except ValueError as exc:
        raise NumericError(f"refusing to serialize a non-finite value: {exc}") from exc


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_jsonl(path, rows: Iterable[Any]) -> None:
    _atomic_write(path, "".join(dumps(r) + "\n" for r in rows))


def read_jsonl(path, parse: Callable[[dict, "_Line"], Any]) -> list:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, "<line>", f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(path, lineno, "<line>", "expected a JSON object")
            out.append(parse(obj, _Line(path, lineno, obj)))
    return out


def write_json(path, obj: Any) -> None:
    _atomic_write(path, dumps(obj) + "\n")


def read_json(path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, "<document>", exc.msg) from None


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Line:
    """Typed field access that reports the file, line and field on failure."""

    def __init__(self, path: Path, lineno: int, obj: dict):
        self.path, self.lineno, self.obj = path, lineno, obj

    def fail(self, name: str, reason: str):
        raise ParseError(self.path, self.lineno, name, reason)

    def get(self, name: str):
        if name not in self.obj:
            self.fail(name, "missing")
        return self.obj[name]

    def int(self, name: str) -> int:
        v = self.get(name)
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(name, f"expected an integer, got {v!r}")
        return v

    def float(self, name: str) -> float:
        v = self.get(name)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(name, f"expected a finite number, got {v!r}")
        return float(v)

    def bool(self, name: str) -> bool:
        v = self.get(name)
        if not isinstance(v, bool):
            self.fail(name, f"expected true/false, got {v!r}")
        return v

    def ints(self, name: str) -> tuple[int, ...]:
        v = self.get(name)
        if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, int) for x in v):
            self.fail(name, "expected an array of integers")
        return tuple(v)

    def floats(self, name: str) -> tuple[float, ...]:
        v = self.get(name)
        if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float))
                                          or not math.isfinite(x) for x in v):
            self.fail(name, "expected an array of finite numbers")
        return tuple(float(x) for x in v)


# corpus ---------------------------------------------------------------------

def video_row(v: Video) -> dict:
    return {"video_id": v.video_id, "title_tokens": list(v.title_tokens), "cover_feature": list(v.cover_feature),
            "tags": list(v.tags), "y1": list(v.y1), "y2": list(v.y2), "publish_time": v.publish_time}


def _parse_video(_, f: _Line) -> Video:
    publish = f.int("publish_time")
    if publish < 0:
        f.fail("publish_time", "must be non-negative")
    return Video(f.int("video_id"), f.ints("title_tokens"), f.floats("cover_feature"),
                 tuple(sorted(set(f.ints("tags")))), f.ints("y1"), f.ints("y2"), publish)


def save_videos(path, videos: Sequence[Video]) -> None:
    write_jsonl(path, (video_row(v) for v in videos))


def load_videos(path) -> list[Video]:
    return read_jsonl(path, _parse_video)


def _parse_user(obj, f: _Line) -> User:
    hist = f.get("click_history")
    if not isinstance(hist, list):
        f.fail("click_history", "expected an array of [video_id, timestamp] pairs")
    pairs = []
    for item in hist:
        if (not isinstance(item, list) or len(item) != 2
                or any(isinstance(x, bool) or not isinstance(x, int) for x in item)):
            f.fail("click_history", f"bad entry {item!r}")
        pairs.append((item[0], item[1]))
    if any(b[1] < a[1] for a, b in zip(pairs, pairs[1:])):
        f.fail("click_history", "timestamps must be non-decreasing")
    return User(f.int("user_id"), tuple(pairs))


def save_users(path, users: Sequence[User]) -> None:
    write_jsonl(path, ({"user_id": u.user_id, "click_history": [list(p) for p in u.click_history]} for u in users))


def load_users(path) -> list[User]:
    return read_jsonl(path, _parse_user)


def save_corpus(directory, videos: Sequence[Video], users: Sequence[User]) -> None:
    directory = Path(directory)
    save_videos(directory / "videos.jsonl", videos)
    save_users(directory / "users.jsonl", users)


def load_corpus(directory) -> tuple[list[Video], list[User]]:
    directory = Path(directory)
    return load_videos(directory / "videos.jsonl"), load_users(directory / "users.jsonl")


def _parse_click(_, f: _Line) -> tuple:
    clicked = f.bool("clicked")
    watch = f.float("watch_duration")
    if watch < 0 or (not clicked and watch != 0):
        f.fail("watch_duration", "must be 0 for non-clicks and non-negative otherwise")
    return f.int("user_id"), f.int("video_id"), f.int("timestamp"), clicked, watch


def save_clicks(path, log: ClickLog) -> None:
    rows = ({"user_id": e.user_id, "video_id": e.video_id, "timestamp": e.timestamp, "clicked": e.clicked,
             "watch_duration": e.watch_duration} for e in log)
    write_jsonl(path, rows)


def load_clicks(path) -> ClickLog:
    rows = read_jsonl(path, _parse_click)
    if not rows:
        return ClickLog()
    return ClickLog(*zip(*rows))


def save_ground_truth(path, truth: GroundTruth) -> None:
    write_json(path, {
        "num_topics": truth.num_topics,
        "topics_per_primary": truth.topics_per_primary,
        "topics_per_secondary": truth.topics_per_secondary,
        "video_topics": [[v, list(t)] for v, t in sorted(truth.video_topics.items())],
        "user_preferences": truth.user_preferences.tolist(),
        "user_activity": truth.user_activity.tolist(),
    })


def load_ground_truth(path) -> GroundTruth:
    blob = read_json(path)
    g = blob["num_topics"]
    prefs = np.array(blob["user_preferences"], dtype=np.float64).reshape(-1, g)
    return GroundTruth({int(v): tuple(t) for v, t in blob["video_topics"]}, prefs,
                       np.array(blob["user_activity"], dtype=np.float64), g,
                       blob["topics_per_primary"], blob["topics_per_secondary"])


# tag embeddings ---------------------------------------------------------------

def save_tag_embeddings(path, table: TagEmbeddingTable) -> None:
    lines = [f"{table.num_tags} {table.dim}"]
    for tag, row in enumerate(table.vectors):
        lines.append("\t".join([str(tag)] + [repr(float(x)) for x in row]))
    _atomic_write(path, "\n".join(lines) + "\n")


def load_tag_embeddings(path) -> TagEmbeddingTable:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        return TagEmbeddingTable(np.zeros((0, 0)), [])
    header = lines[0].split()
    if len(header) != 2 or not all(h.isdigit() for h in header):
        raise ParseError(path, 1, "header", "expected 'T d_tag'")
    T, d = int(header[0]), int(header[1])
    vectors = np.zeros((T, d))
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        try:
            tag = int(parts[0])
        except ValueError:
            raise ParseError(path, lineno, "tag_id", f"not an integer: {parts[0]!r}") from None
        if not 0 <= tag < T:
            raise ParseError(path, lineno, "tag_id", f"{tag} outside [0, {T})")
        if len(parts) != d + 1:
            raise ParseError(path, lineno, "vector", f"expected {d} values, got {len(parts) - 1}")
        try:
            values = [float(x) for x in parts[1:]]
        except ValueError as exc:
            raise ParseError(path, lineno, "vector", str(exc)) from None
        if not all(math.isfinite(x) for x in values):
            raise ParseError(path, lineno, "vector", "non-finite value")
        vectors[tag] = values
        seen.add(tag)
    if len(seen) != T:
        raise ParseError(path, len(lines), "tag_id", f"expected {T} tags, found {len(seen)}")
    return TagEmbeddingTable(vectors, [])


def save_tag_graph(path, graph: TagGraph) -> None:
    p = graph.probabilities
    write_jsonl(path, ({"a": int(a), "b": int(b), "weight": int(w), "p": float(q)}
                       for a, b, w, q in zip(graph.edge_a, graph.edge_b, graph.weights, p)))


def load_tag_graph(path, num_tags: int) -> TagGraph:
    rows = read_jsonl(path, lambda _, f: (f.int("a"), f.int("b"), f.int("weight")))
    return TagGraph.from_edges(num_tags, {(a, b): w for a, b, w in rows})


# topics ---------------------------------------------------------------------

def topic_model_json(model: TopicModel) -> dict:
    return {"kind": "topic_model", "K": model.num_topics, "threshold": model.threshold,
            "centers": model.centers.tolist(), "inertia": model.inertia,
            "inertia_curve": list(model.inertia_curve), "seed": model.seed}


def topic_model_from_json(blob: dict) -> TopicModel:
    centers = np.array(blob["centers"], dtype=np.float64).reshape(blob["K"], -1)
    return TopicModel(centers, float(blob["threshold"]), float(blob["inertia"]),
                      [float(x) for x in blob["inertia_curve"]], int(blob["seed"]))


def save_assignments(path, assignments: Iterable[TopicAssignment]) -> None:
    write_jsonl(path, ({"video_id": a.video_id, "topic_ids": list(a.topic_ids),
                        "similarities": list(a.similarities)} for a in assignments))


def _parse_assignment(_, f: _Line) -> TopicAssignment:
    ids, sims = f.ints("topic_ids"), f.floats("similarities")
    if not ids:
        f.fail("topic_ids", "must be non-empty")
    if len(ids) != len(sims):
        f.fail("similarities", "length differs from topic_ids")
    return TopicAssignment(f.int("video_id"), ids, sims)


def load_assignments(path) -> dict[int, TopicAssignment]:
    return {a.video_id: a for a in read_jsonl(path, _parse_assignment)}


# queues ---------------------------------------------------------------------

def save_queues(path, queues: dict[int, TopicQueue]) -> None:
    write_jsonl(path, ({"topic_id": t, "entries": [e.as_row() for e in queues[t].entries]} for t in sorted(queues)))


def _parse_queue(_, f: _Line) -> TopicQueue:
    rows = f.get("entries")
    if not isinstance(rows, list):
        f.fail("entries", "expected an array")
    entries = []
    for row in rows:
        ok = (isinstance(row, list) and len(row) == 5
              and all(isinstance(x, int) and not isinstance(x, bool) for x in row[:3])
              and isinstance(row[3], (int, float)) and isinstance(row[4], bool))
        if not ok:
            f.fail("entries", f"bad entry {row!r}")
        entries.append(QueueEntry(row[0], row[1], row[2], float(row[3]), row[4]))
    return TopicQueue(f.int("topic_id"), entries)


def load_queues(path) -> dict[int, TopicQueue]:
    return {q.topic_id: q for q in read_jsonl(path, _parse_queue)}


# curves -----------------------------------------------------------------------

def save_curve(path, rows: Iterable[tuple], header: Sequence[str] = ("day", "value")) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def load_curve(path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
