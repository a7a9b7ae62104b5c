"""Representation quality measured through clustering agreement with class labels."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..corpus import GroundTruth, Video, cover_matrix, secondary_of
from ..config import SyntheticSpec
from ..mmoe import MmoeNetwork
from ..tag_embedding import TagEmbeddingTable, tag_representations
from ..topics import combine_blocks, distance_ratio, fit_kmeans
from .metrics import MetricReport, ari, nmi

#: the three configurations compared, weakest first
CONFIGURATIONS = ("image_only", "mmoe", "mmoe_tag")


def representation_eval(representations: np.ndarray, class_labels: Mapping[str, Sequence[int]],
                        seed: int = 0, restarts: int = 20, max_iters: int = 100) -> MetricReport:
    """K-means with k = number of classes for every label set, scored by ARI and NMI."""
    metrics = {}
    for name, labels in class_labels.items():
        k = len(set(labels))
        model = fit_kmeans(representations, k, max_iters=max_iters, seed=seed, restarts=restarts)
        metrics[f"{name}.ari"] = ari(labels, model.labels)
        metrics[f"{name}.nmi"] = nmi(labels, model.labels)
    return MetricReport(metrics, {"num_points": int(len(representations)), "seed": seed})


def class_labels(videos: Sequence[Video], truth: GroundTruth, spec: SyntheticSpec) -> dict[str, list[int]]:
    """Primary class and the secondary class of each video's dominant planted topic."""
    return {
        "PC": [v.y1[0] for v in videos],
        "SC": [secondary_of(truth.dominant_topic(v.video_id), spec) for v in videos],
    }


def configuration_representations(videos: Sequence[Video], net: MmoeNetwork,
                                  table: TagEmbeddingTable) -> dict[str, np.ndarray]:
    z = net.joint_representation(videos)
    return {
        "image_only": combine_blocks(cover_matrix(videos)),
        "mmoe": combine_blocks(z),
        "mmoe_tag": combine_blocks(tag_representations(videos, table), z),
    }


def compare_representations(videos: Sequence[Video], truth: GroundTruth, spec: SyntheticSpec,
                            net: MmoeNetwork, table: TagEmbeddingTable, seed: int = 0,
                            restarts: int = 20, ratio_labels: str = "SC") -> dict:
    """ARI/NMI per configuration and label set, plus the inter/intra distance ratio."""
    labels = class_labels(videos, truth, spec)
    reps = configuration_representations(videos, net, table)
    out = {}
    for name in CONFIGURATIONS:
        report = representation_eval(reps[name], labels, seed=seed, restarts=restarts)
        out[name] = {**report.metrics, "distance_ratio": distance_ratio(reps[name], labels[ratio_labels])}
    return out


def ordering_holds(results: Mapping[str, Mapping[str, float]], metric: str) -> bool:
    values = [results[name][metric] for name in CONFIGURATIONS]
    return all(a < b for a, b in zip(values, values[1:]))
