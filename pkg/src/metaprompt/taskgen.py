"""Self-supervised anchor meta-tasks: sentence-pair, multi-choice, single-sentence.

Tasks are materialized: every example stores its composed hidden vector and a
soft label, so training never touches the corpus or the encoder again.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ClusterModel
from .encoder import N_CHOICES, compose_choice, compose_pair

log = logging.getLogger(__name__)

FORMATS = ("sp", "mc", "ss")
LABEL_DIM = {"sp": 3, "mc": N_CHOICES, "ss": N_CHOICES}

# sentence-pair classes (shared by both sub-tasks)
ADJACENT, OTHER_DOC, SAME_DOC = 0, 1, 2
SAME_CLUSTER, OTHER_CLUSTER = 0, 1


class TaskError(ValueError):
    pass


@dataclass
class Example:
    hidden: np.ndarray
    soft_label: np.ndarray
    source: tuple = ()  # provenance for re-deriving the label; not serialized


@dataclass
class Episode:
    """A stack of examples of one format: ``h`` is n x D, ``y`` is n x C."""

    fmt: str
    h: np.ndarray
    y: np.ndarray
    sources: list = field(default_factory=list)

    def __post_init__(self):
        self.h = np.atleast_2d(np.asarray(self.h, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if len(self.h) != len(self.y):
            raise TaskError("hidden/label count mismatch")
        if self.fmt not in FORMATS:
            raise TaskError(f"unknown format {self.fmt!r}")
        if self.y.shape[1] != LABEL_DIM[self.fmt]:
            raise TaskError(f"label dim {self.y.shape[1]} does not match format {self.fmt}")

    @classmethod
    def from_examples(cls, fmt: str, examples) -> "Episode":
        examples = list(examples)
        if not examples:
            raise TaskError("empty episode")
        return cls(
            fmt,
            np.stack([e.hidden for e in examples]),
            np.stack([e.soft_label for e in examples]),
            [e.source for e in examples],
        )

    def examples(self) -> list[Example]:
        src = self.sources if len(self.sources) == len(self) else [()] * len(self)
        return [Example(h, y, s) for h, y, s in zip(self.h, self.y, src)]

    def take(self, idx) -> "Episode":
        idx = np.asarray(idx, dtype=np.int64)
        src = [self.sources[i] for i in idx] if len(self.sources) == len(self) else []
        return Episode(self.fmt, self.h[idx], self.y[idx], src)

    def __len__(self):
        return len(self.h)


@dataclass
class MetaTask:
    fmt: str
    support: Episode
    query: Episode
    anchor_cluster: int


@dataclass(frozen=True)
class TaskConfig:
    support_size: int = 32
    query_size: int = 32
    n_clusters: int = 16
    nsp_fraction: float = 0.5  # share of NSP vs similarity examples in sp tasks
    mc_adjacent_fraction: float = 0.5
    tasks_per_cluster: int = 2
    ss_tasks: int = 32


def one_hot(i: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[i] = 1.0
    return v


def _stream(seed: int, fmt: str, cluster: int):
    return np.random.default_rng(np.random.SeedSequence([seed, FORMATS.index(fmt), cluster]))


class _Index:
    """Global sentence index -> (doc, pos) bookkeeping."""

    def __init__(self, corpus, clusters: ClusterModel):
        sents = corpus.sentences()
        if len(sents) != len(clusters.assignment):
            raise TaskError("clustering does not cover the corpus sentences")
        self.doc = np.array([s.doc_id for s in sents])
        self.pos = np.array([s.pos for s in sents])
        self.cluster = np.asarray(clusters.assignment)
        self.doc_rows: dict[int, np.ndarray] = {}
        for i, d in enumerate(self.doc):
            self.doc_rows.setdefault(int(d), []).append(i)
        self.doc_rows = {d: np.array(r) for d, r in self.doc_rows.items()}
        self.n = len(sents)

    def adjacent(self, i):
        rows = self.doc_rows[int(self.doc[i])]
        return rows[np.abs(self.pos[rows] - self.pos[i]) == 1]

    def same_doc_far(self, i):
        rows = self.doc_rows[int(self.doc[i])]
        return rows[np.abs(self.pos[rows] - self.pos[i]) >= 2]


def episode_split(examples, support_size: int, query_size: int, rng, fmt: str | None = None):
    if isinstance(examples, Episode):
        ep = examples
    else:
        examples = list(examples)
        if fmt is None:
            raise TaskError("format required when splitting a list of examples")
        ep = Episode.from_examples(fmt, examples)
    if support_size < 1 or query_size < 1:
        raise TaskError("support and query sizes must be >= 1")
    if len(ep) < support_size + query_size:
        raise TaskError(f"need {support_size + query_size} examples, have {len(ep)}")
    perm = rng.permutation(len(ep))
    return ep.take(perm[:support_size]), ep.take(perm[support_size : support_size + query_size])


def _pair_example(idx: _Index, H, a, rng, nsp: bool):
    if nsp:
        options = []
        adj = idx.adjacent(a)
        far = idx.same_doc_far(a)
        if len(adj):
            options.append(ADJACENT)
        if len(far):
            options.append(SAME_DOC)
        others = np.flatnonzero(idx.doc != idx.doc[a])
        if len(others):
            options.append(OTHER_DOC)
        if not options:
            return None
        label = options[rng.integers(len(options))]
        if label == ADJACENT:
            b = adj[rng.integers(len(adj))]
        elif label == SAME_DOC:
            b = far[rng.integers(len(far))]
        else:
            b = others[rng.integers(len(others))]
        kind = "nsp"
    else:
        same = np.flatnonzero(idx.cluster == idx.cluster[a])
        same = same[same != a]
        other = np.flatnonzero(idx.cluster != idx.cluster[a])
        use_same = len(same) and (not len(other) or rng.random() < 0.5)
        label = SAME_CLUSTER if use_same else OTHER_CLUSTER
        pool = same if use_same else other
        if not len(pool):
            return None
        b = pool[rng.integers(len(pool))]
        kind = "sim"
    return Example(compose_pair(H[a], H[b]), one_hot(label, 3), (kind, int(a), int(b)))


def _tasks_by_cluster(fmt, corpus, clusters, H, cfg: TaskConfig, seed, make_example):
    idx = _Index(corpus, clusters)
    H = np.asarray(H, dtype=float)
    per_task = cfg.support_size + cfg.query_size
    tasks = []
    for c in range(clusters.k):
        rng = _stream(seed, fmt, c)
        anchors = rng.permutation(np.flatnonzero(idx.cluster == c))
        built = []
        cursor = 0
        while len(built) < cfg.tasks_per_cluster:
            exs = []
            while len(exs) < per_task and cursor < len(anchors):
                ex = make_example(idx, H, anchors[cursor], rng)
                cursor += 1
                if ex is not None:
                    exs.append(ex)
            if len(exs) < per_task:
                break
            s, q = episode_split(exs, cfg.support_size, cfg.query_size, rng, fmt=fmt)
            built.append(MetaTask(fmt, s, q, c))
        if not built:
            log.warning("cluster %d too small for a %s episode (%d sentences); skipped", c, fmt, len(anchors))
        tasks.extend(built)
    return tasks


def make_sentence_pair_tasks(corpus, clusters, H, cfg: TaskConfig, seed: int) -> list[MetaTask]:
    def make(idx, H, a, rng):
        return _pair_example(idx, H, a, rng, nsp=rng.random() < cfg.nsp_fraction)

    return _tasks_by_cluster("sp", corpus, clusters, H, cfg, seed, make)


def make_multi_choice_tasks(corpus, clusters, H, cfg: TaskConfig, seed: int) -> list[MetaTask]:
    def make(idx: _Index, H, a, rng):
        adj = idx.adjacent(a)
        if len(adj) and rng.random() < cfg.mc_adjacent_fraction:
            correct = adj[rng.integers(len(adj))]
            kind = "mc_adj"
        else:
            same = np.flatnonzero(idx.cluster == idx.cluster[a])
            same = same[same != a]
            if not len(same):
                return None
            correct = same[rng.integers(len(same))]
            kind = "mc_clu"
        neg_pool = np.flatnonzero((idx.doc != idx.doc[a]) & (idx.cluster != idx.cluster[a]))
        if len(neg_pool) < N_CHOICES - 1:
            return None
        negs = rng.choice(neg_pool, size=N_CHOICES - 1, replace=False)
        slot = int(rng.integers(N_CHOICES))
        cands = list(negs)
        cands.insert(slot, correct)
        h = compose_choice(H[a], [H[i] for i in cands])
        return Example(h, one_hot(slot, N_CHOICES), (kind, int(a), *map(int, cands)))

    return _tasks_by_cluster("mc", corpus, clusters, H, cfg, seed, make)


def make_single_sentence_tasks(clusters: ClusterModel, H, cfg: TaskConfig, seed: int) -> list[MetaTask]:
    if clusters.k < N_CHOICES:
        raise TaskError(f"need at least {N_CHOICES} clusters, have {clusters.k}")
    H = np.asarray(H, dtype=float)
    per_task = cfg.support_size + cfg.query_size
    counts = [per_task // N_CHOICES + (i < per_task % N_CHOICES) for i in range(N_CHOICES)]
    sizes = np.bincount(clusters.assignment, minlength=clusters.k)
    eligible = np.flatnonzero(sizes >= max(counts))
    if len(eligible) < N_CHOICES:
        raise TaskError("fewer than 4 clusters large enough for single-sentence tasks")
    tasks = []
    for t in range(cfg.ss_tasks):
        rng = _stream(seed, "ss", t)
        chosen = rng.choice(eligible, size=N_CHOICES, replace=False)
        cents = [clusters.centroids[c] for c in chosen]
        exs = []
        for slot, (c, n) in enumerate(zip(chosen, counts)):
            for i in rng.choice(clusters.members(c), size=n, replace=False):
                exs.append(
                    Example(compose_choice(H[i], cents), one_hot(slot, N_CHOICES), ("ss", int(i), *map(int, chosen)))
                )
        s, q = episode_split(exs, cfg.support_size, cfg.query_size, rng, fmt="ss")
        tasks.append(MetaTask("ss", s, q, int(chosen[0])))
    return tasks


def build_task_pool(corpus, clusters, H, cfg: TaskConfig, seed: int, formats=FORMATS) -> list[MetaTask]:
    tasks = []
    if "sp" in formats:
        tasks += make_sentence_pair_tasks(corpus, clusters, H, cfg, seed)
    if "mc" in formats:
        tasks += make_multi_choice_tasks(corpus, clusters, H, cfg, seed)
    if "ss" in formats:
        tasks += make_single_sentence_tasks(clusters, H, cfg, seed)
    return tasks


def _ep_json(ep: Episode):
    return [{"h": h.tolist(), "y": y.tolist()} for h, y in zip(ep.h, ep.y)]


def save_tasks(tasks, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in tasks:
            rec = {"format": t.fmt, "cluster": int(t.anchor_cluster), "support": _ep_json(t.support), "query": _ep_json(t.query)}
            f.write(json.dumps(rec) + "\n")


def load_tasks(path) -> list[MetaTask]:
    tasks = []
    with open(Path(path), encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                fmt = rec["format"]
                eps = [
                    Episode(fmt, [e["h"] for e in rec[k]], [e["y"] for e in rec[k]]) for k in ("support", "query")
                ]
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise TaskError(f"{path}:{lineno}: malformed task record ({exc})") from exc
            tasks.append(MetaTask(fmt, eps[0], eps[1], int(rec["cluster"])))
    return tasks
