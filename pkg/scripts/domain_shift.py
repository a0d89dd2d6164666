"""Domain-shift benchmark: SUPMER-initialized vs vanilla prompt tuning, best and final accuracy.

    python3 scripts/domain_shift.py --seeds 1 2 3 4 5 [--out report.json] [--set shift.kappa=0.5 ...]
"""

import argparse
import json

from metaprompt.cli import split_config
from metaprompt.harness import domain_shift_benchmark
from metaprompt.pipeline import make_backbone


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    p.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE",
                   help="TrainConfig overrides; shift.* keys go to the benchmark config")
    p.add_argument("--out", default=None)
    args = p.parse_args()
    train_cfg, shift = split_config(dict(kv.split("=", 1) for kv in args.set))
    backbone = make_backbone(d_p=train_cfg.d_p)
    rep = domain_shift_benchmark(backbone, shift, args.seeds, train_cfg)
    summary = rep.summary()
    print(f"{'method':<8} {'domain':<10} {'best':>13} {'final':>13}")
    for method, doms in summary.items():
        for dom, v in doms.items():
            b, f = v["best"], v["final"]
            print(f"{method:<8} {dom:<10} {b['mean']:.3f}+-{b['std']:.3f} {f['mean']:.3f}+-{f['std']:.3f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rep.to_dict(), fh, sort_keys=True, indent=1)


if __name__ == "__main__":
    main()
