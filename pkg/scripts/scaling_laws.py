#!/usr/bin/env python3
"""Run the volume-scaling experiments and print the fitted log-log slopes.

Covers the maximal hitting time (target slope d), the stationary excursion
length at fixed (r, R) (target slope d), and the nested crossing count
(target slope beta - phi).  Results land in --out as results/CSV/manifest,
and the aggregated slope table prints to stdout.

Usage:
    python scripts/scaling_laws.py --out runs/scaling --replicas 200
"""

import argparse
import json

from coverlab.harness import ExperimentConfig, report, run


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--replicas", type=int, default=200)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    for n in (8, 12, 16, 20):
        cfg = ExperimentConfig(experiment="t_hit", n=n, d=3,
                               replicas=args.replicas, base_seed=args.seed)
        run(cfg, jobs=args.jobs, out_dir=args.out)
    for n in (12, 16, 20, 24):
        cfg = ExperimentConfig(
            experiment="excursion_length", n=n, d=3, replicas=6,
            base_seed=args.seed + 1,
            params={"r": 2, "R": 6, "flavor": "box_in_ball",
                    "num_excursions": 4000, "burn_in": 20})
        run(cfg, jobs=args.jobs, out_dir=args.out)
    for n in (32, 48, 64):
        cfg = ExperimentConfig(
            experiment="w_mean", n=n, d=3, replicas=4,
            base_seed=args.seed + 2,
            params={"beta": 0.85, "phi": 0.55, "num_samples": 3000})
        run(cfg, jobs=args.jobs, out_dir=args.out)

    doc = report(args.out)
    print(json.dumps(doc["loglog"], indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
