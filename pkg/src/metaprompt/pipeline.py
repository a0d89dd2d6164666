"""Corpus -> embeddings -> clusters -> task pools, wired with pinned defaults."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterModel, kmeans
from .corpus import Corpus, GenConfig, generate_synthetic, split_validation
from .encoder import EncoderParams, embed_corpus, make_encoder
from .metalearn import Backbone
from .promptmodel import make_scorer
from .taskgen import FORMATS, MetaTask, TaskConfig, TaskError, build_task_pool

log = logging.getLogger(__name__)

MODEL_SEED = 0  # the frozen encoder/scorer pair is shared by every run
VAL_FRACTION = 0.05


def make_backbone(vocab_size: int = 512, d_p: int = 32, d_h: int = 32, seed: int = MODEL_SEED) -> Backbone:
    return Backbone(make_scorer(d_p=d_p, d_h=d_h, seed=seed), make_encoder(vocab_size, d=32, d_h=d_h, seed=seed))


@dataclass
class TaskBundle:
    train: list[MetaTask]
    val: list[MetaTask]
    clusters: ClusterModel
    embeddings: np.ndarray
    corpus: Corpus
    info: dict = field(default_factory=dict)


def tasks_from_corpus(corpus: Corpus, encoder: EncoderParams, task_cfg: TaskConfig, seed: int,
                      val_fraction: float = VAL_FRACTION, formats=FORMATS) -> TaskBundle:
    train_c, val_c = split_validation(corpus, val_fraction, seed)
    H_tr = embed_corpus(encoder, train_c)
    clusters = kmeans(H_tr, task_cfg.n_clusters, seed=seed)
    train = build_task_pool(train_c, clusters, H_tr, task_cfg, seed, formats)
    # the held-out split is small: coarser clusterings so episodes can still be filled
    H_va = embed_corpus(encoder, val_c)
    per_task = task_cfg.support_size + task_cfg.query_size
    k_pair = max(1, min(task_cfg.n_clusters, len(H_va) // per_task))
    val_cfg = TaskConfig(**{**task_cfg.__dict__, "n_clusters": k_pair, "tasks_per_cluster": 1,
                            "ss_tasks": max(4, task_cfg.ss_tasks // 8)})
    val = []
    pair_formats = [f for f in formats if f != "ss"]
    if pair_formats:
        val += build_task_pool(val_c, kmeans(H_va, k_pair, seed=seed + 1), H_va, val_cfg, seed + 1, pair_formats)
    if "ss" in formats:
        try:
            val += build_task_pool(val_c, kmeans(H_va, 4, seed=seed + 2), H_va, val_cfg, seed + 2, ["ss"])
        except TaskError as exc:
            log.warning("no single-sentence validation tasks: %s", exc)
    if not val:
        raise TaskError(f"validation split ({len(val_c.documents)} documents) too small for any episode")
    return TaskBundle(train, val, clusters, H_tr, corpus, {"n_train": len(train), "n_val": len(val)})


def default_bundle(seed: int, backbone: Backbone, gen_cfg: GenConfig | None = None,
                   task_cfg: TaskConfig | None = None) -> TaskBundle:
    corpus = generate_synthetic(gen_cfg or GenConfig(), seed)
    return tasks_from_corpus(corpus, backbone.encoder, task_cfg or TaskConfig(), seed)
