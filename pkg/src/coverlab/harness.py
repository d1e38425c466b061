"""Config-driven experiment runner: seeding, replicas, persistence.

A config is a JSON object with the documented key set

    {
      "experiment":  one of STATISTICS,
      "n": int, "d": int,
      "replicas": int,
      "base_seed": int,
      "laziness": float (optional, default 0),
      "params": { statistic-specific parameters },
      "out_dir": str (optional; CLI --out overrides)
    }

Replica i derives all of its randomness from (base_seed, stream=i), so
results are independent of scheduling and of the parallelism degree.  Runs
persist results.json, a long-form CSV (one row per replica per statistic),
and a manifest keyed by the config hash.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import __version__
from .excursion import (count_excursions, count_nested_excursions,
                        estimate_T_rR, estimate_thin_T, excursion_hit_frequency,
                        sample_W, validate_delta)
from .lattice import TorusGeometry, decompose
from .latepoints import (neighbor_pair_statistic, sample_bernoulli_field,
                         sample_uncovered_at, separation_statistic)
from .potential import constants, t_star, t_star_radii
from .walk import WalkConfig, cover_time, hitting_times


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    n: int
    d: int
    replicas: int
    base_seed: int
    params: dict = field(default_factory=dict)
    laziness: float = 0.0
    out_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {"experiment", "n", "d", "replicas", "base_seed", "params",
                 "laziness", "out_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(
                experiment=doc["experiment"], n=int(doc["n"]), d=int(doc["d"]),
                replicas=int(doc["replicas"]), base_seed=int(doc["base_seed"]),
                params=dict(doc.get("params", {})),
                laziness=float(doc.get("laziness", 0.0)),
                out_dir=doc.get("out_dir"))
        except KeyError as exc:
            raise ConfigError(f"missing config key: {exc}") from exc

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def canonical(self) -> str:
        doc = {
            "experiment": self.experiment, "n": self.n, "d": self.d,
            "replicas": self.replicas, "base_seed": self.base_seed,
            "params": self.params, "laziness": self.laziness,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def geometry(self) -> TorusGeometry:
        return TorusGeometry(self.n, self.d)

    def walk_config(self) -> WalkConfig:
        start = self.params.get("start")
        return WalkConfig(geometry=self.geometry(), laziness=self.laziness,
                          seed=self.base_seed,
                          start=tuple(start) if start else None)

    def validate(self) -> None:
        if self.experiment not in STATISTICS:
            raise ConfigError(
                f"unknown statistic id {self.experiment!r}; "
                f"known: {sorted(STATISTICS)}")
        if self.replicas < 0:
            raise ConfigError("replicas must be >= 0")
        self.geometry()
        p = self.params
        if self.experiment in ("excursion_count", "nested_count"):
            delta = p.get("delta")
            if delta is not None:
                validate_delta(self.n, self.d, float(p["r"]), float(delta),
                               float(p.get("psi", 0.05)),
                               nested=self.experiment == "nested_count")
        if self.experiment in ("z_gamma", "neighbor_pairs", "uncovered_count",
                               "distinguish"):
            alpha = float(p.get("alpha", -1))
            if alpha < 0:
                raise ConfigError("alpha must be provided and >= 0")
        if self.experiment == "distinguish":
            c = constants(self.d)
            alpha = float(p["alpha"])
            eps = float(p.get("epsilon", 0.02))
            hi = 2 * alpha * c.p_d / (1 + c.p_d)
            if not (0 < eps < hi):
                raise ConfigError(
                    f"epsilon = {eps} outside (0, {hi:.4f}), the admissible "
                    "range for the neighbor-pair threshold exponent")


# ---------------------------------------------------------------------------
# t_* calibration


def calibrate_t_star(n: int, d: int, phi: float = 0.5, seed: int = 0,
                     num_excursions: int = 4000,
                     laziness: float = 0.0) -> dict:
    """Monte Carlo calibration of the reference clock.

    Estimates the stationary excursion length and the per-excursion hit
    probability of the calibration annulus, then applies
    t_* = log(n^d) * T / p.
    """
    r, R = t_star_radii(n, d, phi)
    g = TorusGeometry(n, d)
    center = (n // 2,) * d
    cfg = WalkConfig(geometry=g, seed=seed)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stats = estimate_T_rR(cfg, center, r, R, "ball_in_ball",
                              num_excursions=num_excursions, burn_in=20,
                              stream=770_000)
        hf = excursion_hit_frequency(cfg, center, r, R, "ball_in_ball",
                                     num_excursions, targets=[center],
                                     burn_in=1, stream=770_001)
    value = t_star(n, d, phi, stats.t_hat, hf.frequency)
    return {"t_star": value, "T_hat": stats.t_hat, "p_hat": hf.frequency,
            "r": r, "R": R, "phi": phi}


def _resolve_t_star(cfg: ExperimentConfig) -> float:
    p = cfg.params
    if "t_star" in p:
        return float(p["t_star"])
    cal = calibrate_t_star(cfg.n, cfg.d, float(p.get("phi_star", 0.5)),
                           seed=cfg.base_seed, laziness=cfg.laziness)
    return cal["t_star"]


# ---------------------------------------------------------------------------
# statistics registry: experiment id -> per-replica callable


def _stat_cover_time(cfg: ExperimentConfig, shared: dict, i: int) -> dict:
    return {"cover_time": float(cover_time(cfg.walk_config(), stream=i))}


def _stat_t_hit(cfg: ExperimentConfig, shared: dict, i: int) -> dict:
    g = cfg.geometry()
    w = WalkConfig(geometry=g, laziness=cfg.laziness, seed=cfg.base_seed,
                   start=(g.n // 2,) * g.d)
    t = hitting_times(w, (0,) * g.d, 1, stream_base=i)[0]
    return {"hit_time": float(t)}


def _stat_uncovered(cfg: ExperimentConfig, shared: dict, i: int) -> dict:
    fs = sample_uncovered_at(cfg.walk_config(), float(cfg.params["alpha"]),
                             shared["t_star"], stream=i)
    return {"uncovered_count": float(fs.size)}


def _stat_excursion_count(cfg: ExperimentConfig, shared: dict, i: int) -> dict:
    p = cfg.params
    g = cfg.geometry()
    cnt = count_excursions(cfg.walk_config(), (g.n // 2,) * g.d,
                           float(p["r"]), float(p["R"]), int(p["t"]),
                           p.get("flavor", "box_in_ball"), stream=i + 1)
    return {"excursion_count": float(cnt.count)}


def _stat_excursion_length(cfg: ExperimentConfig, shared: dict, i: int) -> dict:
    p = cfg.params
    g = cfg.geometry()
    stats = estimate_T_rR(cfg.walk_config(), (g.n // 2,) * g.d,
                          float(p["r"]), float(p["R"]),
                          p.get("flavor", "box_in_ball"),
                          num_excursions=int(p.get("num_excursions", 2000)),
                          burn_in=int(p.get("burn_in", 10)), stream=i)
    return {"T_rR": stats.t_hat}


def _stat_w_mean(cfg: ExperimentConfig, shared: dict, i: int) -> dict:
    p = cfg.params
    ws = sample_W(cfg.n, cfg.d, float(p["beta"]), float(p["phi"]),
                  int(p.get("num_samples", 2000)), seed=cfg.base_seed,
                  stream=i)
    return {"w_mean": ws.mean}


def _stat_nested(cfg: ExperimentConfig, shared: dict, i: int) -> dict:
    p = cfg.params
    g = cfg.geometry()
    dec = shared["decomposition"]
    z = tuple(p.get("z") or dec.tile_center_site((0,) * g.d))
    count = count_nested_excursions(
        cfg.walk_config(), z, float(p["r"]), float(p["R"]), int(p["t"]),
        dec, float(p["delta"]), thin_T_hat=shared.get("thin_T"), stream=i + 1)
    return {"nested_count": float(count)}


def _stat_z_gamma(cfg: ExperimentConfig, shared: dict, i: int) -> dict:
    p = cfg.params
    fs = sample_uncovered_at(cfg.walk_config(), float(p["alpha"]),
                             shared["t_star"], stream=i)
    rep = separation_statistic(fs, float(p["gamma"]))
    return {"z_gamma": float(rep.z_gamma),
            "z_positive": 1.0 if rep.z_gamma > 0 else 0.0,
            "min_pair_distance": rep.min_pair_distance
            if math.isfinite(rep.min_pair_distance) else -1.0}


def _stat_neighbor_pairs(cfg: ExperimentConfig, shared: dict, i: int) -> dict:
    p = cfg.params
    fs = sample_uncovered_at(cfg.walk_config(), float(p["alpha"]),
                             shared["t_star"], stream=i)
    return {"neighbor_pairs": float(neighbor_pair_statistic(fs))}


def _stat_distinguish(cfg: ExperimentConfig, shared: dict, i: int) -> dict:
    p = cfg.params
    alpha = float(p["alpha"])
    g = cfg.geometry()
    fs = sample_uncovered_at(cfg.walk_config(), alpha, shared["t_star"],
                             stream=i)
    ref = sample_bernoulli_field(g, g.n ** (-alpha * g.d),
                                 seed=cfg.base_seed * 1_000_003 + i)
    return {"walk_pairs": float(neighbor_pair_statistic(fs)),
            "ref_pairs": float(neighbor_pair_statistic(ref))}


STATISTICS: dict[str, Callable] = {
    "cover_time": _stat_cover_time,
    "t_hit": _stat_t_hit,
    "uncovered_count": _stat_uncovered,
    "excursion_count": _stat_excursion_count,
    "excursion_length": _stat_excursion_length,
    "w_mean": _stat_w_mean,
    "nested_count": _stat_nested,
    "z_gamma": _stat_z_gamma,
    "neighbor_pairs": _stat_neighbor_pairs,
    "distinguish": _stat_distinguish,
}

_NEEDS_T_STAR = {"uncovered_count", "z_gamma", "neighbor_pairs", "distinguish"}


def _prepare_shared(cfg: ExperimentConfig) -> dict:
    shared: dict = {}
    if cfg.experiment in _NEEDS_T_STAR:
        shared["t_star"] = _resolve_t_star(cfg)
    if cfg.experiment == "nested_count":
        p = cfg.params
        dec = decompose(cfg.geometry(), float(p["beta"]), float(p["phi"]))
        shared["decomposition"] = dec
        shared["thin_T"] = estimate_thin_T(
            cfg.walk_config(), dec, (0,) * cfg.d, stream=880_000)
    return shared


def run_replica(cfg: ExperimentConfig, shared: dict, i: int) -> dict:
    row = STATISTICS[cfg.experiment](cfg, shared, i)
    return {"replica": i, **row}


def _replica_job(args):
    doc, shared, i = args
    cfg = ExperimentConfig.from_dict(doc)
    return run_replica(cfg, shared, i)


@dataclass
class ResultRecord:
    config: dict
    config_hash: str
    shared: dict
    per_replica: list
    aggregates: dict
    wallclock_s: float
    versions: dict

    def to_json(self) -> str:
        return json.dumps({
            "schema": "coverlab-result/1",
            "config": self.config, "config_hash": self.config_hash,
            "shared": self.shared, "per_replica": self.per_replica,
            "aggregates": self.aggregates, "wallclock_s": self.wallclock_s,
            "versions": self.versions,
        }, sort_keys=True, indent=2)


def _aggregate(per_replica: list) -> dict:
    if not per_replica:
        return {}
    keys = [k for k in per_replica[0] if k != "replica"]
    out = {}
    for k in keys:
        vals = np.array([row[k] for row in per_replica], dtype=np.float64)
        agg = {"mean": float(np.mean(vals)), "n": len(vals)}
        if len(vals) > 1:
            agg["ci95_halfwidth"] = float(
                1.96 * np.std(vals, ddof=1) / math.sqrt(len(vals)))
        out[k] = agg
    return out


def run(cfg: ExperimentConfig, jobs: int = 1,
        out_dir: Optional[str] = None) -> ResultRecord:
    """Execute the experiment, persist results, and return the record."""
    cfg.validate()
    t0 = time.time()
    shared = _prepare_shared(cfg)
    doc = json.loads(cfg.canonical())
    # decomposition objects are not JSON/payload friendly across processes
    shared_payload = {k: v for k, v in shared.items()
                      if isinstance(v, (int, float, str))}
    if jobs > 1 and cfg.experiment != "nested_count":
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(
                _replica_job,
                [(doc, shared_payload, i) for i in range(cfg.replicas)]))
    else:
        rows = [run_replica(cfg, shared, i) for i in range(cfg.replicas)]
    rows.sort(key=lambda r: r["replica"])
    record = ResultRecord(
        config=doc, config_hash=cfg.config_hash(),
        shared=shared_payload, per_replica=rows,
        aggregates=_aggregate(rows), wallclock_s=time.time() - t0,
        versions={"coverlab": __version__, "numpy": np.__version__})
    target = out_dir or cfg.out_dir
    if target:
        persist(record, target)
    return record


def long_csv(record: ResultRecord) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["config_hash", "experiment", "replica", "statistic",
                     "value"])
    exp = record.config["experiment"]
    for row in record.per_replica:
        for key in sorted(row):
            if key == "replica":
                continue
            writer.writerow([record.config_hash, exp, row["replica"], key,
                             repr(float(row[key]))])
    return buf.getvalue()


def persist(record: ResultRecord, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    h = record.config_hash
    results_path = os.path.join(out_dir, f"results_{h}.json")
    csv_path = os.path.join(out_dir, f"long_{h}.csv")
    with open(results_path, "w") as fh:
        fh.write(record.to_json())
    with open(csv_path, "w") as fh:
        fh.write(long_csv(record))
    manifest_path = os.path.join(out_dir, "manifest.json")
    manifest = {}
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    manifest[h] = {
        "experiment": record.config["experiment"],
        "files": [os.path.basename(results_path), os.path.basename(csv_path)],
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


# ---------------------------------------------------------------------------
# report: fold long CSVs into plot-ready tables


def report(directory: str) -> dict:
    """Aggregate all long-form CSVs in a directory into plot-ready tables.

    Produces per-(experiment, statistic) means and, for configs sharing an
    experiment across several n, a log-log regression table.
    """
    tables: dict = {}
    meta: dict = {}
    if os.path.isdir(directory):
        for name in sorted(os.listdir(directory)):
            if name.startswith("results_") and name.endswith(".json"):
                with open(os.path.join(directory, name)) as fh:
                    doc = json.load(fh)
                meta[doc["config_hash"]] = doc["config"]
            if not (name.startswith("long_") and name.endswith(".csv")):
                continue
            with open(os.path.join(directory, name)) as fh:
                reader = csv.DictReader(fh)
                for row in reader:
                    key = (row["config_hash"], row["experiment"],
                           row["statistic"])
                    tables.setdefault(key, []).append(float(row["value"]))
    series: dict = {}
    for (h, exp, stat), vals in sorted(tables.items()):
        cfgdoc = meta.get(h, {})
        entry = {
            "config_hash": h, "experiment": exp, "statistic": stat,
            "n": cfgdoc.get("n"), "replicas": len(vals),
            "mean": float(np.mean(vals)),
            "exceed_fraction_positive": float(np.mean(np.array(vals) > 0)),
        }
        series.setdefault((exp, stat), []).append(entry)
    out = {"tables": [], "loglog": []}
    for (exp, stat), entries in sorted(series.items()):
        out["tables"].extend(entries)
        with_n = [e for e in entries if e["n"]]
        if len({e["n"] for e in with_n}) >= 3 and all(
                e["mean"] > 0 for e in with_n):
            xs = np.log([e["n"] for e in with_n])
            ys = np.log([e["mean"] for e in with_n])
            slope, intercept = np.polyfit(xs, ys, 1)
            out["loglog"].append({"experiment": exp, "statistic": stat,
                                  "slope": float(slope),
                                  "intercept": float(intercept),
                                  "points": len(with_n)})
    return out
