"""Command-line interface.

Subcommands: simulate | constants | excursions | distinguish | uniformity |
oracle-fixtures | report.  Exit codes: 0 success, 2 validation error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import warnings

import numpy as np

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="base seed (u64)")
    p.add_argument("--out", type=str, default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="coverlab",
        description="Random-walk coverage laboratory for the torus Z_n^d")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an experiment config")
    p.add_argument("--config", required=True, help="path to a JSON config")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel replica workers (results are identical "
                        "for any value)")
    _add_common(p)

    p = sub.add_parser("constants", help="emit the constants document")
    p.add_argument("--d", type=int, required=True)
    _add_common(p)

    p = sub.add_parser("excursions", help="excursion-length and exit-chain summary")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--flavor", default="box_in_ball",
                   choices=["box_in_ball", "box_in_box", "ball_in_ball"])
    p.add_argument("--num", type=int, default=5000)
    _add_common(p)

    p = sub.add_parser("distinguish",
                       help="neighbor-pair threshold test: walk vs Bernoulli")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--epsilon", type=float, default=0.02)
    p.add_argument("--replicas", type=int, default=100)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    _add_common(p)

    p = sub.add_parser("uniformity", help="first-hit uniformity on a separated set")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--gamma", type=float, default=0.6)
    p.add_argument("--trials", type=int, default=100_000)
    _add_common(p)

    p = sub.add_parser("oracle-fixtures",
                       help="compute the exact-oracle regression fixtures")
    p.add_argument("--n", type=int, default=16)
    _add_common(p)

    p = sub.add_parser("report", help="aggregate result CSVs into tables")
    p.add_argument("--dir", required=True)
    _add_common(p)
    return ap


def _emit(doc: dict, out: str | None, name: str) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, name)
        with open(path, "w") as fh:
            fh.write(text + "\n")
        print(path)
    else:
        print(text)


def _cmd_simulate(args) -> int:
    from .harness import ExperimentConfig, run
    cfg = ExperimentConfig.from_file(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.replicas is not None:
        overrides["replicas"] = args.replicas
    if overrides:
        doc = json.loads(cfg.canonical())
        doc.update(overrides)
        cfg = ExperimentConfig.from_dict(doc)
    record = run(cfg, jobs=args.jobs, out_dir=args.out)
    print(json.dumps({"config_hash": record.config_hash,
                      "aggregates": record.aggregates,
                      "wallclock_s": round(record.wallclock_s, 2)},
                     indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_constants(args) -> int:
    from .potential import constants
    c = constants(args.d)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"constants_d{args.d}.json")
        with open(path, "w") as fh:
            fh.write(c.to_json() + "\n")
        print(path)
    else:
        print(c.to_json())
    return EXIT_OK


def _cmd_excursions(args) -> int:
    from .excursion import estimate_T_rR, exit_chain_stats
    from .lattice import TorusGeometry
    from .walk import WalkConfig
    seed = 0 if args.seed is None else args.seed
    g = TorusGeometry(args.n, args.d)
    cfg = WalkConfig(geometry=g, seed=seed)
    center = (args.n // 2,) * args.d
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stats = estimate_T_rR(cfg, center, args.r, args.R, args.flavor,
                              num_excursions=args.num, burn_in=20)
        chain = exit_chain_stats(cfg, center, args.r, args.R,
                                 num_excursions=args.num, flavor=args.flavor)
    doc = {
        "n": args.n, "d": args.d, "r": args.r, "R": args.R,
        "flavor": args.flavor, "num_excursions": args.num, "seed": seed,
        "T_hat": stats.t_hat, "T_ci95": stats.ci_halfwidth,
        "k0_hat": chain.k0_hat, "symmetrized_tv": chain.symmetrized_tv,
        "per_class_means": {str(k): v
                            for k, v in sorted(stats.per_class_means.items())},
    }
    _emit(doc, args.out, f"excursions_n{args.n}_r{args.r}_R{args.R}.json")
    return EXIT_OK


def _cmd_distinguish(args) -> int:
    from .harness import ExperimentConfig, run
    seed = 1 if args.seed is None else args.seed
    cfg = ExperimentConfig(
        experiment="distinguish", n=args.n, d=args.d, replicas=args.replicas,
        base_seed=seed,
        params={"alpha": args.alpha, "epsilon": args.epsilon})
    record = run(cfg, jobs=args.jobs, out_dir=args.out)
    from .potential import constants
    c = constants(args.d)
    expo = args.d - 2 * args.alpha * args.d / (1 + c.p_d) - args.epsilon * args.d
    thr = float(args.n**expo)
    walk = np.array([r["walk_pairs"] for r in record.per_replica])
    ref = np.array([r["ref_pairs"] for r in record.per_replica])
    doc = {
        "alpha": args.alpha, "epsilon": args.epsilon, "n": args.n,
        "threshold": thr,
        "walk_exceed_frequency": float(np.mean(walk >= thr)),
        "ref_exceed_frequency": float(np.mean(ref >= thr)),
        "replicas": args.replicas, "config_hash": record.config_hash,
    }
    doc["gap"] = doc["walk_exceed_frequency"] - doc["ref_exceed_frequency"]
    _emit(doc, args.out, f"distinguish_a{args.alpha}_n{args.n}.json")
    return EXIT_OK


def _cmd_uniformity(args) -> int:
    from .latepoints import hitting_uniformity_test
    from .lattice import TorusGeometry
    from .walk import WalkConfig
    seed = 2 if args.seed is None else args.seed
    g = TorusGeometry(args.n, args.d)
    targets = _separated_targets(g, args.size, args.gamma, seed)
    cfg = WalkConfig(geometry=g, seed=seed)
    rep = hitting_uniformity_test(cfg, targets, args.trials, args.gamma)
    doc = {
        "n": args.n, "d": args.d, "gamma": args.gamma, "size": args.size,
        "trials": args.trials, "tv": rep.tv, "chi2_pvalue": rep.chi2_pvalue,
        "per_site_frequency": {str(k): v
                               for k, v in sorted(rep.per_site_frequency.items())},
    }
    _emit(doc, args.out, f"uniformity_n{args.n}_k{args.size}.json")
    return EXIT_OK


def _separated_targets(g, size: int, gamma: float, seed: int):
    """Greedy random construction of an n^gamma-separated site set."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(9,)))
    thr = g.n**gamma
    chosen: list = []
    for _ in range(200_000):
        cand = tuple(int(c) for c in rng.integers(0, g.n, size=g.d))
        ok = True
        for s in chosen:
            delta = g.min_image(cand, s)
            if math.sqrt(float(np.dot(delta, delta))) < thr:
                ok = False
                break
        if ok:
            chosen.append(cand)
            if len(chosen) == size:
                return chosen
    raise RuntimeError(
        f"could not place {size} sites at separation n^{gamma} in Z_{g.n}^{g.d}")


def _cmd_oracle_fixtures(args) -> int:
    from .lattice import TorusGeometry
    from . import oracle as O
    n = args.n
    g = TorusGeometry(n, 3)
    center = (n // 2,) * 3
    t0 = time.time()
    chain = O.exit_chain(g, center, 2, 6, "box_in_ball")
    p_one = O.excursion_hit_probability(chain, [center])
    x, y = center, (center[0] + 1, center[1], center[2])
    p_two = O.excursion_hit_probability(chain, [x, y])
    et = O.exact_expected_hitting_time(g, "stationary", [(0, 0, 0)])
    fixtures = {
        "schema": "coverlab-oracle-fixtures/1",
        "n": n, "d": 3,
        "problems": [
            {"problem": "one_point_excursion_hit(r=2,R=6,box_in_ball)",
             "value": p_one, "residual_bound": O.RESIDUAL_REL},
            {"problem": "adjacent_pair_excursion_hit(r=2,R=6,box_in_ball)",
             "value": p_two, "residual_bound": O.RESIDUAL_REL},
            {"problem": "mean_excursion_length(r=2,R=6,box_in_ball)",
             "value": chain.mean_excursion_length,
             "residual_bound": O.RESIDUAL_REL},
            {"problem": "stationary_expected_hitting_time(origin)",
             "value": et, "residual_bound": O.RESIDUAL_REL},
        ],
        "computed_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "wallclock_s": round(time.time() - t0, 2),
    }
    _emit(fixtures, args.out, f"oracle_fixtures_n{n}.json")
    return EXIT_OK


def _cmd_report(args) -> int:
    from .harness import report
    doc = report(args.dir)
    _emit(doc, args.out, "report.json")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "constants": _cmd_constants,
    "excursions": _cmd_excursions,
    "distinguish": _cmd_distinguish,
    "uniformity": _cmd_uniformity,
    "oracle-fixtures": _cmd_oracle_fixtures,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
