"""Downstream few-shot prompt tuning with a frozen regularizer, evaluation, and
the synthetic domain-shift benchmark.

The benchmark task asks whether two sentences come from the same document,
read through the sentence-pair head with the similarity labels used during
meta-training (``SAME_CLUSTER`` for related pairs, ``OTHER_CLUSTER`` otherwise).  A reserved
embedding coordinate is overwritten with a nuisance value whose sign agrees
with the label with probability (1 + rho) / 2 in the source domain and
(1 - rho) / 2 in every target domain.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import metagrad as mg
from . import promptmodel as pm
from .corpus import GenConfig, generate_synthetic
from .encoder import compose_pair, embed_corpus
from .metalearn import Backbone, TrainConfig, meta_train, regulate
from .optim import make_optimizer
from .pipeline import default_bundle
from .taskgen import OTHER_CLUSTER, SAME_CLUSTER, Episode, MetaTask, TaskError, one_hot

log = logging.getLogger(__name__)

METHODS = ("supmer", "vanilla")


@dataclass
class DownstreamTask:
    train: Episode
    val: Episode
    tests: dict  # domain name -> Episode

    def __post_init__(self):
        if len(self.train) == 0:
            raise TaskError("empty train episode")
        fmts = {self.train.fmt, self.val.fmt} | {ep.fmt for ep in self.tests.values()}
        if len(fmts) != 1:
            raise TaskError(f"mixed formats in downstream task: {sorted(fmts)}")
        train_rows = {r.tobytes() for r in self.train.h}
        for name, ep in self.tests.items():
            if any(r.tobytes() in train_rows for r in ep.h):
                raise TaskError(f"test domain {name!r} overlaps the train episode")

    @property
    def fmt(self) -> str:
        return self.train.fmt


def evaluate(scorer: pm.ScorerParams, theta, episodes) -> float:
    """Pooled argmax accuracy over one or more episodes (ties go to the lowest index)."""
    if isinstance(episodes, Episode):
        episodes = [episodes]
    episodes = list(episodes)
    if not episodes or sum(len(ep) for ep in episodes) == 0:
        raise TaskError("no examples to evaluate")
    hits = n = 0
    for ep in episodes:
        pred = pm.logits(scorer, theta, ep.h, ep.fmt).argmax(axis=1)
        hits += int((pred == ep.y.argmax(axis=1)).sum())
        n += len(ep)
    return hits / n


def prompt_tune(backbone: Backbone, theta_star, phi_star: mg.RegularizerState | None, task: DownstreamTask,
                steps: int, lr: float = 0.1, eval_interval: int = 10, optimizer: str = "sgd"):
    """Tune the prompt on ``task.train`` with gradients passed through the frozen ``phi_star``.

    Returns (theta, curve) where ``curve`` maps each test domain (and ``"val"``)
    to its accuracy at steps 0, eval_interval, 2 eval_interval, ...
    """
    if len(task.train) == 0:
        raise TaskError("empty train episode")
    if steps < 0 or eval_interval < 1:
        raise ValueError("steps must be >= 0 and eval_interval >= 1")
    theta = np.array(theta_star, dtype=float, copy=True)
    holder = MetaTask(task.fmt, task.train, task.train, -1)
    opt = make_optimizer(optimizer, lr)
    names = ["val", *task.tests]
    eps = {"val": task.val, **task.tests}
    curve = {k: [] for k in names}

    def record():
        for k in names:
            curve[k].append(evaluate(backbone.scorer, theta, eps[k]))

    record()
    for t in range(1, steps + 1):
        g = pm.grad_prompt(backbone.scorer, theta, task.train)
        if phi_star is not None:
            g, _ = regulate(backbone, phi_star, holder, g)
        theta = opt.step({"theta": theta}, {"theta": g})["theta"]
        if t % eval_interval == 0:
            record()
    return theta, {k: np.asarray(v) for k, v in curve.items()}


def run_vanilla_pt(backbone: Backbone, task: DownstreamTask, steps: int, lr: float = 0.1, seed: int = 0,
                   eval_interval: int = 10, n_tokens: int = 8, init_std: float = 0.5, optimizer: str = "sgd"):
    """Prompt tuning from a seeded random prompt with identity gradients."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E]))
    theta0 = pm.init_prompt(n_tokens, backbone.scorer.d_p, rng, init_std)
    return prompt_tune(backbone, theta0, None, task, steps, lr, eval_interval, optimizer)


# ---------------------------------------------------------------- benchmark


@dataclass(frozen=True)
class ShiftConfig:
    rho: float = 0.9
    kappa: float = 0.5
    nuisance_coord: int = -1
    shots: int = 16  # per label
    n_val: int = 32
    n_test: int = 200
    n_targets: int = 2
    tune_steps: int = 200
    eval_interval: int = 10
    lr: float = 0.1
    optimizer: str = "adam"
    meta_steps: int = 1000
    n_docs: int = 120
    data_seed: int = 7

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        for name in ("shots", "n_val", "n_test", "n_targets", "eval_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.tune_steps < 0 or self.meta_steps < 0 or self.lr < 0 or self.kappa < 0:
            raise ValueError("steps, lr and kappa must be non-negative")

    @classmethod
    def from_mapping(cls, values: dict) -> "ShiftConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in known:
                raise ValueError(f"unknown benchmark key {k!r}")
            default = getattr(cls(), k)
            kwargs[k] = type(default)(v) if isinstance(v, str) and not isinstance(default, str) else v
        return cls(**kwargs)


def _pair_pool(corpus, H, rng, n: int, sign: float, cfg: ShiftConfig, exclude=frozenset()):
    """``n`` balanced same-document / other-document pairs with a nuisance coordinate."""
    docs = [[(d_i, s.pos) for s in doc] for d_i, doc in enumerate(corpus.documents)]
    offsets = np.cumsum([0] + [len(d) for d in corpus.documents])
    agree = (1.0 + sign * cfg.rho) / 2.0
    out, keys = [], []
    labels = np.tile([SAME_CLUSTER, OTHER_CLUSTER], (n + 1) // 2)[:n]
    rng.shuffle(labels)
    for lab in labels:
        while True:
            d = int(rng.integers(len(docs)))
            if lab == SAME_CLUSTER:
                if len(docs[d]) < 2:
                    continue
                i, j = rng.choice(len(docs[d]), size=2, replace=False)
                a, b = offsets[d] + i, offsets[d] + j
            else:
                d2 = int(rng.integers(len(docs) - 1))
                d2 += d2 >= d
                a = offsets[d] + int(rng.integers(len(docs[d])))
                b = offsets[d2] + int(rng.integers(len(docs[d2])))
            if (int(a), int(b)) not in exclude:
                break
        keys.append((int(a), int(b)))
        y_sign = 1.0 if lab == SAME_CLUSTER else -1.0
        nuis = cfg.kappa * (y_sign if rng.random() < agree else -y_sign)
        e1, e2 = H[a].copy(), H[b].copy()
        e1[cfg.nuisance_coord] = nuis
        e2[cfg.nuisance_coord] = nuis
        out.append((compose_pair(e1, e2), one_hot(int(lab), 3)))
    ep = Episode("sp", np.stack([h for h, _ in out]), np.stack([y for _, y in out]), keys)
    return ep, set(keys)


def make_shift_task(backbone: Backbone, cfg: ShiftConfig, seed: int) -> DownstreamTask:
    """Source train/val/in-domain test plus ``n_targets`` reversed-correlation domains."""
    gen = GenConfig(n_docs=cfg.n_docs)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.data_seed, seed, 0xD5]))
    src = generate_synthetic(gen, 10_000 + 100 * seed)
    H = embed_corpus(backbone.encoder, src)
    train, used = _pair_pool(src, H, rng, 2 * cfg.shots, +1.0, cfg)
    val, used2 = _pair_pool(src, H, rng, cfg.n_val, +1.0, cfg, used)
    tests = {"in_domain": _pair_pool(src, H, rng, cfg.n_test, +1.0, cfg, used | used2)[0]}
    for t in range(cfg.n_targets):
        tgt = generate_synthetic(gen, 10_000 + 100 * seed + t + 1)
        Ht = embed_corpus(backbone.encoder, tgt)
        tests[f"target_{t}"] = _pair_pool(tgt, Ht, rng, cfg.n_test, -1.0, cfg)[0]
    return DownstreamTask(train, val, tests)


@dataclass
class BenchmarkReport:
    seeds: list
    config: dict
    # method -> domain -> {"best": [...], "final": [...]} per seed; "ood" averages the target curves
    per_seed: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)  # method -> domain -> per-seed lists
    steps: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            method: {dom: {k: {"mean": float(np.mean(v)), "std": float(np.std(v))} for k, v in vals.items()}
                     for dom, vals in doms.items()}
            for method, doms in self.per_seed.items()
        }

    def to_dict(self) -> dict:
        return {"seeds": self.seeds, "n_seeds": len(self.seeds), "config": self.config, "steps": self.steps,
                "per_seed": self.per_seed, "curves": self.curves, "summary": self.summary()}


def meta_train_for_benchmark(backbone: Backbone, seed: int, meta_steps: int, train_cfg: TrainConfig | None = None):
    bundle = default_bundle(seed, backbone)
    base = train_cfg or TrainConfig()
    cfg = TrainConfig(**{**base.to_dict(), "max_steps": meta_steps, "seed": seed})
    return meta_train(bundle.train, cfg, backbone, bundle.val)


def domain_shift_benchmark(backbone: Backbone, cfg: ShiftConfig, seeds, train_cfg: TrainConfig | None = None,
                           meta=None) -> BenchmarkReport:
    """Meta-train per seed, then tune SUPMER-initialized and vanilla prompts on the source task.

    ``meta`` optionally maps seed -> (theta*, phi*) to skip meta-training.
    """
    seeds = sorted(int(s) for s in seeds)
    if len(seeds) < 2:
        raise ValueError("need at least 2 seeds")
    train_cfg = train_cfg or TrainConfig()
    report = BenchmarkReport(seeds, {"shift": asdict(cfg), "train": train_cfg.to_dict()})
    report.steps = list(range(0, cfg.tune_steps + 1, cfg.eval_interval))
    for seed in seeds:
        task = make_shift_task(backbone, cfg, seed)
        if meta is not None and seed in meta:
            theta_star, phi_star = meta[seed]
        else:
            res = meta_train_for_benchmark(backbone, seed, cfg.meta_steps, train_cfg)
            theta_star, phi_star = res.theta, res.phi
        phi_before = phi_star.flat().copy()
        runs = {
            "supmer": prompt_tune(backbone, theta_star, phi_star if train_cfg.regularizer else None, task,
                                  cfg.tune_steps, cfg.lr, cfg.eval_interval, cfg.optimizer)[1],
            "vanilla": run_vanilla_pt(backbone, task, cfg.tune_steps, cfg.lr, seed, cfg.eval_interval,
                                      train_cfg.n_tokens, train_cfg.prompt_init_std, cfg.optimizer)[1],
        }
        if not np.array_equal(phi_before, phi_star.flat()):
            raise RuntimeError("frozen regularizer was modified during tuning")
        for method, curve in runs.items():
            targets = [k for k in curve if k.startswith("target")]
            curve = {**curve, "ood": np.mean([curve[k] for k in targets], axis=0)}
            doms = report.per_seed.setdefault(method, {})
            cur = report.curves.setdefault(method, {})
            for dom, acc in curve.items():
                if dom == "val":
                    continue
                d = doms.setdefault(dom, {"best": [], "final": []})
                d["best"].append(float(acc.max()))
                d["final"].append(float(acc[-1]))
                cur.setdefault(dom, []).append(acc.tolist())
        log.info("benchmark seed %d done", seed)
    return report
