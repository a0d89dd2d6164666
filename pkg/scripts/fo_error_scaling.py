"""Error of the first-order prompt gradient against finite differences of the full outer loss, vs inner lr."""

import argparse

import numpy as np

from metaprompt.metagrad import RegularizerState
from metaprompt.metalearn import TrainConfig, outer_objective, task_terms
from metaprompt.pipeline import default_bundle, make_backbone


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.4, 0.2, 0.1, 0.05, 0.025])
    p.add_argument("--n-tasks", type=int, default=2)
    args = p.parse_args()
    backbone = make_backbone()
    tasks = default_bundle(args.seed, backbone).train[: args.n_tasks]
    rng = np.random.default_rng(args.seed)
    theta = rng.standard_normal((TrainConfig().n_tokens, backbone.encoder.d_h)) * 0.5
    phi = RegularizerState.identity(theta.shape[1], backbone.encoder.d_h)
    prev = None
    print(f"{'alpha1':>8} {'rel err':>10} {'ratio':>6}")
    for a in args.alphas:
        cfg = TrainConfig(alpha1=a)
        fo = sum(task_terms(backbone, theta, phi, t, cfg, 0.5).grad_theta for t in tasks)
        fd = fd_grad(lambda th: outer_objective(backbone, th, phi, tasks, cfg, 0.5), theta.copy())
        err = np.linalg.norm(fo - fd) / np.linalg.norm(fd)
        print(f"{a:8.4f} {err:10.3e} {'' if prev is None else f'{err / prev:6.3f}'}")
        prev = err


if __name__ == "__main__":
    main()
