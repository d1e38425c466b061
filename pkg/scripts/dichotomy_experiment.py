#!/usr/bin/env python3
"""The clustering dichotomy at a glance.

For alpha below the clustering threshold the late-point field carries many
close pairs; above it the field is spread out.  This script measures, with
box-clock fields on per-alpha decompositions:

  * the fraction of replicas whose separation count Z_gamma is positive,
  * the neighbor-pair threshold test against matched Bernoulli fields.

Usage:
    python scripts/dichotomy_experiment.py --n 32 --replicas 200
"""

import argparse
import json
import math
import warnings

from coverlab.excursion import estimate_thin_T
from coverlab.harness import calibrate_t_star
from coverlab.lattice import TorusGeometry, admissible_sides, decompose
from coverlab.latepoints import (distinguisher_test, sample_bernoulli_field,
                                 sample_coupled_fields, sample_uncovered_at,
                                 separation_statistic)
from coverlab.walk import WalkConfig


def pick_box_sides(n: int, alpha: float) -> tuple[int, int]:
    """Largest admissible (box side, gap) with box exponent below alpha."""
    best = None
    for s_bar in admissible_sides(n):
        gap = max(1, s_bar // 4)
        s = s_bar - gap
        if s - gap < 1:
            continue
        if math.log(s) / math.log(n) >= alpha:
            continue
        best = (s, gap)
    if best is None:
        raise SystemExit(f"no admissible decomposition for n={n}, alpha={alpha}")
    return best


def z_positive_fraction(cfg, tstar, alpha, gamma, replicas):
    g = cfg.geometry
    s, gap = pick_box_sides(g.n, alpha)
    beta = math.log(s) / math.log(g.n)
    phi = math.log(max(gap, 1.3)) / math.log(g.n)
    dec = decompose(g, beta, phi)
    thin = estimate_thin_T(cfg, dec, (0,) * g.d, num_excursions=12_000,
                           stream=991_000 + s)
    pos = 0
    for i in range(replicas):
        cf = sample_coupled_fields(cfg, alpha, tstar, dec, 0.3,
                                   thin_T_hat=thin, stream=3000 + i)
        pos += separation_statistic(cf.excursion_stopped, gamma).z_gamma > 0
    return pos / replicas


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--replicas", type=int, default=200)
    ap.add_argument("--gamma", type=float, default=0.5)
    ap.add_argument("--epsilon", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=55)
    args = ap.parse_args()

    n = args.n
    g = TorusGeometry(n, 3)
    cfg = WalkConfig(geometry=g, seed=args.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tstar = calibrate_t_star(n, 3, seed=3)["t_star"]
        low = z_positive_fraction(cfg, tstar, 0.4, args.gamma, args.replicas)
        high = z_positive_fraction(cfg, tstar, 0.8, args.gamma, args.replicas)
        walk = [sample_uncovered_at(cfg, 0.4, tstar, stream=5000 + i)
                for i in range(args.replicas)]
        ref = [sample_bernoulli_field(g, n ** (-1.2), seed=8800 + i)
               for i in range(args.replicas)]
        res = distinguisher_test(walk, ref, alpha=0.4, epsilon=args.epsilon)
    print(json.dumps({
        "n": n, "gamma": args.gamma, "t_star": tstar,
        "z_positive_fraction": {"alpha=0.4": low, "alpha=0.8": high},
        "distinguisher": {
            "epsilon": args.epsilon, "threshold": res.threshold,
            "walk_exceed": res.walk_exceed_frequency,
            "ref_exceed": res.ref_exceed_frequency, "gap": res.gap,
            "distinguishable": res.distinguishable,
        },
    }, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
