"""Command-line entry point: corpus -> tasks -> meta-training -> tuning/eval/benchmark -> plot data."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import harness
from .corpus import GenConfig, generate_synthetic, load_corpus, save_corpus
from .metalearn import TrainConfig, init_state, meta_train, validate
from .pipeline import default_bundle, make_backbone, tasks_from_corpus
from .store import load_checkpoint, read_metrics, save_checkpoint, write_metrics
from .taskgen import TaskConfig, load_tasks, save_tasks

log = logging.getLogger("metaprompt")

SEED_ENV = "SUPMER_SEED"
SHIFT_PREFIX = "shift."


class UsageError(Exception):
    pass


def read_config(path) -> dict:
    """``key=value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        k, v = (x.strip() for x in line.split("=", 1))
        out[k] = v
    return out


def split_config(values: dict):
    train, shift = {}, {}
    for k, v in values.items():
        (shift if k.startswith(SHIFT_PREFIX) else train)[k.removeprefix(SHIFT_PREFIX)] = v
    try:
        return TrainConfig.from_mapping(train), harness.ShiftConfig.from_mapping(shift)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def resolve_seed(arg) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc


def _configs(args):
    cfg, shift = split_config(read_config(args.config) if args.config else {})
    updates = {"seed": args.seed}
    if getattr(args, "max_steps", None) is not None:
        updates["max_steps"] = args.max_steps
    return TrainConfig(**{**cfg.to_dict(), **updates}), shift


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1), encoding="utf-8")


def cmd_gen_corpus(args, out: Path):
    gen = GenConfig(n_docs=args.n_docs) if args.n_docs else GenConfig()
    corpus = generate_synthetic(gen, args.seed)
    save_corpus(corpus, out / "corpus.txt")
    _dump(out / "corpus_info.json", {"seed": args.seed, "n_docs": len(corpus.documents), "n_sentences": len(corpus)})


def _load_pools(tasks_dir):
    d = Path(tasks_dir)
    for name in ("train_tasks.jsonl", "val_tasks.jsonl"):
        if not (d / name).exists():
            raise FileNotFoundError(f"missing {d / name}")
    return load_tasks(d / "train_tasks.jsonl"), load_tasks(d / "val_tasks.jsonl")


def cmd_build_tasks(args, out: Path):
    backbone = make_backbone()
    corpus = load_corpus(args.corpus, vocab_size=backbone.encoder.E.shape[0])
    bundle = tasks_from_corpus(corpus, backbone.encoder, TaskConfig(), args.seed)
    save_tasks(bundle.train, out / "train_tasks.jsonl")
    save_tasks(bundle.val, out / "val_tasks.jsonl")
    _dump(out / "clusters.json", {"k": bundle.clusters.k, "inertia": bundle.clusters.inertia,
                                  "history": bundle.clusters.history, **bundle.info})


def cmd_meta_train(args, out: Path):
    cfg, _ = _configs(args)
    backbone = make_backbone(d_p=cfg.d_p)
    if args.tasks:
        train, val = _load_pools(args.tasks)
    else:
        bundle = default_bundle(cfg.seed, backbone)
        train, val = bundle.train, bundle.val
    res = meta_train(train, cfg, backbone, val)
    save_checkpoint(out / "checkpoint.json", res.final, cfg, best=(res.theta, res.phi),
                    extra={"best_step": res.best_step, "best_val_loss": res.best_val_loss})
    write_metrics(out / "metrics.jsonl", res.metrics)


def _meta_params(path):
    state, cfg, best = load_checkpoint(path)
    return (best if best is not None else (state.theta, state.phi)), cfg


def cmd_tune(args, out: Path):
    _, shift = _configs(args)
    backbone = make_backbone()
    task = harness.make_shift_task(backbone, shift, args.seed)
    steps = shift.tune_steps if args.steps is None else args.steps
    lr = shift.lr if args.lr is None else args.lr
    if args.vanilla:
        theta, curve = harness.run_vanilla_pt(backbone, task, steps, lr, args.seed, shift.eval_interval,
                                              optimizer=shift.optimizer)
    else:
        if not args.checkpoint:
            raise UsageError("tune needs --checkpoint unless --vanilla is given")
        (theta0, phi), cfg = _meta_params(args.checkpoint)
        theta, curve = harness.prompt_tune(backbone, theta0, phi if cfg.regularizer else None, task, steps, lr,
                                           shift.eval_interval, shift.optimizer)
    _dump(out / "tune.json", {"method": "vanilla" if args.vanilla else "supmer", "seed": args.seed,
                              "steps": list(range(0, steps + 1, shift.eval_interval)),
                              "curve": {k: v.tolist() for k, v in curve.items()}, "theta": theta.tolist()})


def cmd_eval(args, out: Path):
    (theta, phi), cfg = _meta_params(args.checkpoint)
    backbone = make_backbone(d_p=cfg.d_p)
    if args.tasks:
        _, val = _load_pools(args.tasks)
    else:
        val = default_bundle(args.seed, backbone).val
    state = init_state(cfg, backbone)
    state.theta, state.phi = theta, phi
    loss, acc = validate(backbone, state, val, cfg)
    _dump(out / "eval.json", {"seed": args.seed, "n_tasks": len(val), "query_loss": loss, "query_acc": acc})


def cmd_bench_dg(args, out: Path):
    cfg, shift = _configs(args)
    backbone = make_backbone(d_p=cfg.d_p)
    seeds = [args.seed + i for i in range(args.n_seeds)]
    report = harness.domain_shift_benchmark(backbone, shift, seeds, cfg)
    _dump(out / "report.json", report.to_dict())


def cmd_emit_plots(args, out: Path):
    if not args.metrics and not args.report:
        raise UsageError("emit-plots needs --metrics and/or --report")
    if args.metrics:
        recs = read_metrics(args.metrics)
        with open(out / "inner_product_vs_step.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "s", "b", "loss_q", "val_acc"])
            for r in recs:
                w.writerow([r["step"], r["s"], r["b"], r["loss_q"], "" if r["val_acc"] is None else r["val_acc"]])
    if args.report:
        rep = json.loads(Path(args.report).read_text(encoding="utf-8"))
        with open(out / "accuracy_vs_step.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["method", "domain", "seed", "step", "accuracy"])
            for method, doms in rep["curves"].items():
                for dom, per_seed in doms.items():
                    for seed, curve in zip(rep["seeds"], per_seed):
                        for step, acc in zip(rep["steps"], curve):
                            w.writerow([method, dom, seed, step, acc])


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "build-tasks": cmd_build_tasks,
    "meta-train": cmd_meta_train,
    "tune": cmd_tune,
    "eval": cmd_eval,
    "bench-dg": cmd_bench_dg,
    "emit-plots": cmd_emit_plots,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metaprompt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=None, help=f"run seed (default: ${SEED_ENV} or 0)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--config", default=None, help="key=value file (TrainConfig names; shift.* for the benchmark)")
        return sp

    sp = add("gen-corpus", "write a synthetic corpus")
    sp.add_argument("--n-docs", type=int, default=None)
    sp = add("build-tasks", "embed, cluster and build meta-task pools")
    sp.add_argument("--corpus", required=True)
    sp = add("meta-train", "meta-train prompt and regularizer")
    sp.add_argument("--tasks", default=None, help="directory from build-tasks (default: synthetic pool for --seed)")
    sp.add_argument("--max-steps", type=int, default=None)
    sp = add("tune", "few-shot prompt tuning on the source-domain task")
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--vanilla", action="store_true", help="random prompt, identity gradients")
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp = add("eval", "adapted query accuracy of a checkpoint on validation tasks")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--tasks", default=None)
    sp = add("bench-dg", "domain-shift benchmark over consecutive seeds")
    sp.add_argument("--n-seeds", type=int, default=5)
    sp = add("emit-plots", "CSV plot data from metrics and/or a benchmark report")
    sp.add_argument("--metrics", default=None)
    sp.add_argument("--report", default=None)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.seed = resolve_seed(args.seed)
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report and exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
